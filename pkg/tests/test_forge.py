"""Forged corpus: determinism, manifest/CSV agreement, note synthesis."""

from __future__ import annotations

import hashlib
import json
from datetime import datetime
from pathlib import Path

import pandas as pd
import pytest

from ehrfuse.forge import (ForgeConfig, ForgeError, forge_corpus, forge_note,
                           load_manifest)

DT = "%Y-%m-%d %H:%M:%S"


def _tree_hashes(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_same_seed_identical_bytes(tmp_path):
    forge_corpus(ForgeConfig(seed=7, n_subjects=3), tmp_path / "a")
    forge_corpus(ForgeConfig(seed=7, n_subjects=3), tmp_path / "b")
    assert _tree_hashes(tmp_path / "a") == _tree_hashes(tmp_path / "b")


def test_different_seed_differs(tmp_path):
    forge_corpus(ForgeConfig(seed=7, n_subjects=3), tmp_path / "a")
    forge_corpus(ForgeConfig(seed=8, n_subjects=3), tmp_path / "b")
    assert _tree_hashes(tmp_path / "a") != _tree_hashes(tmp_path / "b")


def test_zero_subjects_rejected(tmp_path):
    with pytest.raises(ForgeError, match="n_subjects must be ≥ 1"):
        forge_corpus(ForgeConfig(seed=1, n_subjects=0), tmp_path / "x")


def test_forge_note_single_section():
    assert forge_note(["Chief Complaint"], ["chest pain"]) == "Chief Complaint: chest pain\n"


def test_forge_note_empty():
    assert forge_note([], []) == ""


def test_forge_note_length_mismatch():
    with pytest.raises(ForgeError, match="length mismatch"):
        forge_note(["A", "B"], ["only one"])


def test_manifest_subject_count(corpus200):
    _, manifest = corpus200
    assert len(manifest.admissions) == 200


def test_diagnoses_subjects_in_patients(corpus200):
    root, _ = corpus200
    diag = pd.read_csv(root / "diagnoses_icd.csv")
    patients = pd.read_csv(root / "patients.csv")
    assert set(diag["subject_id"]) <= set(patients["subject_id"])


def test_manifest_roundtrips_from_json(tiny_corpus):
    root, manifest = tiny_corpus
    reloaded = load_manifest(root / "manifest.json")
    assert reloaded.admissions == manifest.admissions
    assert reloaded.notes == manifest.notes
    assert reloaded.icd_members == manifest.icd_members


def test_admission_windows_ordered_and_disjoint(corpus200):
    _, manifest = corpus200
    for subject, admissions in manifest.admissions.items():
        prev_disch = None
        for adm in admissions:
            admit = datetime.strptime(adm["admittime"], DT)
            disch = datetime.strptime(adm["dischtime"], DT)
            assert admit < disch, subject
            if prev_disch is not None:
                assert admit > prev_disch, f"overlap for subject {subject}"
            prev_disch = disch


def test_note_ids_bijective_with_notes_table(tiny_corpus):
    root, manifest = tiny_corpus
    notes = pd.read_csv(root / "notes.csv", dtype=str, keep_default_na=False)
    assert sorted(notes["note_id"]) == sorted(manifest.notes)


def test_event_timestamps_inside_windows(tiny_corpus):
    _, manifest = tiny_corpus
    windows = {}
    for subject, admissions in manifest.admissions.items():
        for adm in admissions:
            windows[adm["hadm_id"]] = (
                datetime.strptime(adm["admittime"], DT),
                datetime.strptime(adm["dischtime"], DT))
    checked = 0
    for hadm, by_modality in manifest.events.items():
        admit, disch = windows[int(hadm)]
        for modality, events in by_modality.items():
            for ev in events:
                # med/proc are intervals ("start"/"end"); the rest are instants
                stamps = [ev["time"]] if "time" in ev else \
                    [ev["start"]] + ([ev["end"]] if ev.get("end") else [])
                for stamp in stamps:
                    t = datetime.strptime(stamp, DT)
                    assert admit <= t <= disch, (hadm, modality, ev)
                    checked += 1
    assert checked > 100


def test_token_counts_match_whitespace_tokens(tiny_corpus):
    root, manifest = tiny_corpus
    notes = pd.read_csv(root / "notes.csv", dtype=str, keep_default_na=False)
    for row in notes.itertuples(index=False):
        assert manifest.notes[row.note_id]["token_count"] == len(row.text.split())


def test_placeholder_content_is_relative_path(tiny_corpus):
    root, manifest = tiny_corpus
    cxr = pd.read_csv(root / "cxr_metadata.csv", dtype=str, keep_default_na=False)
    row = cxr.iloc[0]
    rel = (f"files/p{row.subject_id[:2]}/p{row.subject_id}"
           f"/s{row.study_id}/{row.dicom_id}.jpg")
    assert (root / rel).read_text() == rel


def test_icd_members_match_diagnoses_table(tiny_corpus):
    root, manifest = tiny_corpus
    diag = pd.read_csv(root / "diagnoses_icd.csv", dtype=str)
    for key, members in manifest.icd_members.items():
        code, version = key.split("|")
        rows = diag[(diag["icd_code"] == code) & (diag["icd_version"] == version)]
        expected = sorted({(int(r.subject_id), int(r.hadm_id))
                           for r in rows.itertuples(index=False)})
        assert [tuple(m) for m in members] == expected, key


def test_manifest_json_sorted_and_stable(tiny_corpus):
    root, _ = tiny_corpus
    raw = (root / "manifest.json").read_text()
    assert raw == json.dumps(json.loads(raw), indent=2, sort_keys=True) + "\n"
