"""Modality record resolution, path rendering, and linkage checks."""

from __future__ import annotations

import json
from datetime import datetime

import pytest

from ehrfuse.assets import (ASSET_MODALITIES, AssetError, ModalityRecord,
                            ResolvedRecords, resolve_records, rotation_count,
                            unanchored_frame, verify_paths)
from ehrfuse.cohort import MODE_ALL, CohortSpec, search
from ehrfuse.ingest import load_snapshot
from ehrfuse.paths import DEFAULT_PATH_CONVENTION, load_path_convention

ALL = CohortSpec(mode=MODE_ALL)


def test_partition_covers_every_metadata_row(tiny_snapshot):
    cohort = search(tiny_snapshot, ALL)
    resolved = resolve_records(tiny_snapshot, cohort)
    by_modality = {m: 0 for m in ASSET_MODALITIES}
    for r in resolved.anchored + resolved.unanchored:
        by_modality[r.modality] += 1
    assert by_modality["cxr"] == len(tiny_snapshot.table("cxr_metadata"))
    assert by_modality["ecg"] == len(tiny_snapshot.table("ecg_metadata"))
    assert by_modality["waveform"] == len(tiny_snapshot.table("waveform_metadata"))
    assert by_modality["echo"] == len(tiny_snapshot.table("echo_metadata"))


def test_forged_events_all_anchor(tiny_corpus, tiny_snapshot):
    # Every forged event sits inside its admission window, so window
    # lookup must recover the manifest's true hadm even when the row
    # itself carries none.
    _, manifest = tiny_corpus
    truth = {}
    for hadm, evs in manifest.events.items():
        for modality in ASSET_MODALITIES:
            for ev in evs.get(modality, []):
                truth[(modality, ev["study_id"])] = hadm
    cohort = search(tiny_snapshot, ALL)
    resolved = resolve_records(tiny_snapshot, cohort)
    assert resolved.unanchored == []
    assert len(resolved.anchored) > 0
    for r in resolved.anchored:
        assert r.hadm_id == truth[(r.modality, r.study_id)]


def test_ecg_and_waveform_attrs(tiny_snapshot):
    cohort = search(tiny_snapshot, ALL)
    resolved = resolve_records(tiny_snapshot, cohort, modalities={"ecg", "waveform"})
    seen = set()
    for r in resolved.anchored:
        seen.add(r.modality)
        if r.modality == "ecg":
            assert r.attrs == {"lead_count": 12, "duration_s": 10.0}
        else:
            assert set(r.attrs) == {"duration_s"}
            assert r.attrs["duration_s"] > 0
    assert seen == {"ecg", "waveform"}


def test_view_filter_restricts_cxr(tiny_snapshot):
    cohort = search(tiny_snapshot, ALL)
    table = tiny_snapshot.table("cxr_metadata")
    pa_rows = int((table["view_position"] == "PA").sum())
    resolved = resolve_records(tiny_snapshot, cohort, modalities={"cxr"},
                               view_filter={"PA"})
    records = resolved.anchored + resolved.unanchored
    assert len(records) == pa_rows
    assert all(r.attrs["view_position"] == "PA" for r in records)
    # the filter only applies to cxr, other modalities pass through
    with_ecg = resolve_records(tiny_snapshot, cohort,
                               modalities={"cxr", "ecg"}, view_filter={"PA"})
    assert sum(r.modality == "ecg" for r in with_ecg.anchored) == \
        len(tiny_snapshot.table("ecg_metadata"))


def test_unknown_modality_rejected(tiny_snapshot):
    cohort = search(tiny_snapshot, ALL)
    with pytest.raises(AssetError, match="unknown modalities"):
        resolve_records(tiny_snapshot, cohort, modalities={"ct"})


def test_unknown_view_rejected(tiny_snapshot):
    cohort = search(tiny_snapshot, ALL)
    with pytest.raises(AssetError, match="view positions"):
        resolve_records(tiny_snapshot, cohort, view_filter={"OBLIQUE"})


def test_default_path_layout():
    assert DEFAULT_PATH_CONVENTION.render(
        "cxr", subject_id=10313763, study_id=51527697, dicom_id="img0") == \
        "files/p10/p10313763/s51527697/img0.jpg"
    assert DEFAULT_PATH_CONVENTION.render(
        "ecg", subject_id=10000001, study_id=40001234) == \
        "ecg/p10/p10000001/s40001234/40001234.dat"
    with pytest.raises(KeyError):
        DEFAULT_PATH_CONVENTION.render("mri", subject_id=1)


def test_paths_json_override(tmp_path):
    (tmp_path / "paths.json").write_text(json.dumps(
        {"cxr": "flat/{subject_id}_{study_id}_{dicom_id}.jpg"}))
    convention = load_path_convention(tmp_path)
    assert convention.render("cxr", subject_id=5, study_id=9, dicom_id="d") == \
        "flat/5_9_d.jpg"
    # untouched modalities keep the default template
    assert convention.render("echo", subject_id=12345678, study_id=7) == \
        DEFAULT_PATH_CONVENTION.render("echo", subject_id=12345678, study_id=7)


def test_forged_placeholders_all_exist(tiny_corpus, tiny_snapshot):
    root, _ = tiny_corpus
    cohort = search(tiny_snapshot, ALL)
    resolved = resolve_records(tiny_snapshot, cohort)
    report = verify_paths(resolved, root)
    assert report["missing"] == 0
    assert report["exists"] == report["total"] == \
        len(resolved.anchored) + len(resolved.unanchored)
    sample = resolved.anchored[0]
    assert (root / sample.file_path).read_text() == sample.file_path


def test_verify_paths_flags_deleted_file(tiny_corpus, tiny_snapshot):
    root, _ = tiny_corpus
    cohort = search(tiny_snapshot, ALL)
    resolved = resolve_records(tiny_snapshot, cohort, modalities={"echo"})
    victim = resolved.anchored[0].file_path
    target = root / victim
    payload = target.read_text()
    try:
        target.unlink()
        report = verify_paths(resolved, root)
        assert report["missing"] == 1
        assert report["missing_paths"] == [victim]
    finally:
        target.write_text(payload)


def _cxr_record(subject_id, study_id, dicom_id, view):
    return ModalityRecord(
        modality="cxr", subject_id=subject_id, hadm_id=1, study_id=study_id,
        dicom_id=dicom_id, event_time=datetime(2150, 1, 1), file_path=None,
        attrs={"view_position": view})


def test_rotation_count_handcrafted():
    records = [
        _cxr_record(1, 100, "a", "PA"),
        _cxr_record(1, 100, "b", "PA"),
        _cxr_record(1, 100, "c", "LATERAL"),
        _cxr_record(1, 200, "d", "AP"),
        _cxr_record(2, 100, "e", "AP"),
    ]
    assert rotation_count(records, 1, 100) == {"PA": 2, "LATERAL": 1}
    assert rotation_count(records, 1, 200) == {"AP": 1}
    with pytest.raises(AssetError, match="no cxr study 300 for subject 1"):
        rotation_count(records, 1, 300)


def test_rotation_count_matches_manifest(tiny_corpus, tiny_snapshot):
    _, manifest = tiny_corpus
    cohort = search(tiny_snapshot, ALL)
    resolved = resolve_records(tiny_snapshot, cohort, modalities={"cxr"})
    subject_of = {a["hadm_id"]: s for s, adms in manifest.admissions.items()
                  for a in adms}
    checked = 0
    for hadm, evs in manifest.events.items():
        want: dict[int, dict[str, int]] = {}
        for ev in evs.get("cxr", []):
            per = want.setdefault(ev["study_id"], {})
            per[ev["view"]] = per.get(ev["view"], 0) + 1
        for study_id, views in want.items():
            assert rotation_count(resolved, subject_of[hadm], study_id) == views
            checked += 1
    assert checked > 0


def test_out_of_window_event_lands_unanchored(make_corpus):
    root = make_corpus({
        "patients": [[1, "F", 60]],
        "admissions": [[1, 10, "2150-01-02 00:00:00", "2150-01-05 00:00:00", 0]],
        "echo_metadata": [
            [1, "", 30, "2150-01-03 12:00:00"],   # inside the window
            [1, "", 31, "2150-06-01 00:00:00"],   # months after discharge
        ],
    })
    snapshot = load_snapshot(root)
    cohort = search(snapshot, ALL)
    resolved = resolve_records(snapshot, cohort, modalities={"echo"})
    assert [r.study_id for r in resolved.anchored] == [30]
    assert resolved.anchored[0].hadm_id == 10
    assert [r.study_id for r in resolved.unanchored] == [31]
    assert resolved.unanchored[0].hadm_id is None

    frame = unanchored_frame(resolved)
    assert frame.columns.tolist() == [
        "modality", "subject_id", "study_id", "dicom_id", "event_time", "file_path"]
    assert frame["study_id"].tolist() == [31]


def test_unanchored_frame_sorted():
    records = [
        ModalityRecord("ecg", 2, None, 55, None, datetime(2150, 1, 1), "p2"),
        ModalityRecord("cxr", 1, None, 44, "z", datetime(2150, 1, 1), "p1"),
        ModalityRecord("cxr", 1, None, 44, "a", datetime(2150, 1, 1), "p0"),
    ]
    frame = unanchored_frame(ResolvedRecords(anchored=[], unanchored=records))
    assert frame["modality"].tolist() == ["cxr", "cxr", "ecg"]
    assert frame["dicom_id"].tolist() == ["a", "z", ""]
