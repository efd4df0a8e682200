"""ICD-based cohort selection over the diagnoses table.

Codes are compared undotted and uppercased ("I25.1" == "I251"); a
trailing '*' in a pattern requests prefix matching; name matching is
a case-insensitive substring test against the code dictionary's
long_title. Membership is at (subject_id, hadm_id) granularity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .ingest import DatasetSnapshot

MODE_ALL = "all_subjects"
MODE_ICD = "icd"

VERSIONS = {"9": (9,), "10": (10,), "both": (9, 10)}


class CohortSpecError(ValueError):
    pass


def normalize_code(code: str) -> str:
    return code.replace(".", "").upper().strip()


@dataclass(frozen=True)
class CohortSpec:
    mode: str = MODE_ICD
    icd_version: str = "both"          # "9" | "10" | "both"
    code_patterns: tuple[str, ...] = ()
    disease_name_substrings: tuple[str, ...] = ()
    match_on: str = "code"             # "code" | "name"

    def validate(self) -> None:
        if self.mode not in (MODE_ALL, MODE_ICD):
            raise CohortSpecError(f"mode must be one of [{MODE_ALL}, {MODE_ICD}]: {self.mode!r}")
        if str(self.icd_version) not in VERSIONS:
            raise CohortSpecError(f"icd_version must be one of [9, 10, both]: {self.icd_version!r}")
        if self.match_on not in ("code", "name"):
            raise CohortSpecError(f"match_on must be code or name: {self.match_on!r}")
        if self.mode == MODE_ICD:
            if self.match_on == "code" and not self.code_patterns:
                raise CohortSpecError("mode=icd with match_on=code needs at least one code pattern")
            if self.match_on == "name" and not self.disease_name_substrings:
                raise CohortSpecError("mode=icd with match_on=name needs at least one name substring")
        for p in self.code_patterns:
            if "*" in p[:-1]:
                raise CohortSpecError(f"'*' is only allowed as the final character: {p!r}")
            if not p.rstrip("*"):
                raise CohortSpecError(f"empty code pattern: {p!r}")
        for s in self.disease_name_substrings:
            if not s.strip():
                raise CohortSpecError("empty disease name substring")

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "icd_version": str(self.icd_version),
            "code_patterns": list(self.code_patterns),
            "disease_name_substrings": list(self.disease_name_substrings),
            "match_on": self.match_on,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "CohortSpec":
        spec = cls(
            mode=data.get("mode", MODE_ICD),
            icd_version=str(data.get("icd_version", "both")),
            code_patterns=tuple(data.get("code_patterns", ())),
            disease_name_substrings=tuple(data.get("disease_name_substrings", ())),
            match_on=data.get("match_on", "code"),
        )
        spec.validate()
        return spec


@dataclass(frozen=True)
class Cohort:
    spec: CohortSpec
    members: frozenset[tuple[int, int]]                   # (subject_id, hadm_id)
    matched_codes: dict[str, frozenset[str]]              # pattern -> concrete codes
    member_codes: dict[tuple[int, int], frozenset[str]]   # member -> codes that matched

    @property
    def subject_ids(self) -> frozenset[int]:
        return frozenset(s for s, _ in self.members)

    def sorted_members(self) -> list[tuple[int, int]]:
        return sorted(self.members)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for member in self.sorted_members():
            codes = sorted(self.member_codes.get(member, ())) or [""]
            for code in codes:
                rows.append((member[0], member[1], code))
        return pd.DataFrame(rows, columns=["subject_id", "hadm_id", "matched_code"])

    def write_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")


def _long_titles(snapshot: DatasetSnapshot) -> pd.DataFrame:
    if not snapshot.has_table("d_icd_diagnoses"):
        raise CohortSpecError(
            "name-based matching needs the d_icd_diagnoses code dictionary table")
    d = snapshot.table("d_icd_diagnoses")
    out = d.copy()
    out["norm_code"] = out["icd_code"].map(normalize_code)
    out["title_lower"] = out["long_title"].str.lower()
    return out


def search(snapshot: DatasetSnapshot, spec: CohortSpec) -> Cohort:
    """Resolve spec into admission-level membership, vectorized."""
    spec.validate()
    adm = snapshot.table("admissions")

    if spec.mode == MODE_ALL:
        members = frozenset(
            (int(s), int(h)) for s, h in zip(adm["subject_id"], adm["hadm_id"]))
        return Cohort(spec, members, {}, {})

    dx = snapshot.table("diagnoses_icd")
    versions = VERSIONS[str(spec.icd_version)]
    dx = dx[dx["icd_version"].astype(int).isin(versions)]
    codes = dx["icd_code"].map(normalize_code)

    matched_codes: dict[str, set[str]] = {}
    member_codes: dict[tuple[int, int], set[str]] = {}
    hit_any = np.zeros(len(dx), dtype=bool)

    if spec.match_on == "code":
        for pattern in spec.code_patterns:
            norm = normalize_code(pattern.rstrip("*"))
            if pattern.endswith("*"):
                hits = codes.str.startswith(norm)
            else:
                hits = codes == norm
            matched_codes[pattern] = set(codes[hits])
            hit_any |= hits.to_numpy()
    else:
        titles = _long_titles(snapshot)
        for needle in spec.disease_name_substrings:
            matching = set(titles.loc[
                titles["title_lower"].str.contains(needle.lower(), regex=False),
                "norm_code"])
            hits = codes.isin(matching)
            matched_codes[needle] = set(codes[hits])
            hit_any |= hits.to_numpy()

    hit_rows = dx.loc[hit_any]
    hit_norm = codes.loc[hit_any]
    members = set()
    for (s, h), code in zip(
            zip(hit_rows["subject_id"], hit_rows["hadm_id"]), hit_norm):
        member = (int(s), int(h))
        members.add(member)
        member_codes.setdefault(member, set()).add(code)

    return Cohort(
        spec,
        frozenset(members),
        {p: frozenset(v) for p, v in matched_codes.items()},
        {m: frozenset(v) for m, v in member_codes.items()},
    )


# Modality tables consulted by coverage stats: (table, extra note-type filter).
_STAT_SOURCES = [
    ("admissions", "admissions", None),
    ("lab", "labevents", None),
    ("ds", "notes", "DS"),
    ("rr", "notes", "RR"),
    ("cxr", "cxr_metadata", None),
    ("ecg", "ecg_metadata", None),
    ("echo", "echo_metadata", None),
    ("waveform", "waveform_metadata", None),
]


def _nearest_rank(sorted_values: list[float], k: float) -> float:
    import math
    if not sorted_values:
        return 0.0
    rank = math.ceil(k / 100.0 * len(sorted_values))
    return float(sorted_values[max(rank, 1) - 1])


def cohort_stats(cohort: Cohort, snapshot: DatasetSnapshot) -> dict:
    """Per-modality coverage over the cohort's member admissions.

    Counting is by (subject_id, hadm_id): rows without a resolvable
    hadm_id attribute to the member admission only when the metadata
    carries it; unanchored linkage is the assets module's job, so here
    missing hadm_id rows count toward the subject's sole admission when
    unambiguous, else are skipped.
    """
    members = cohort.sorted_members()
    member_set = set(members)
    report: dict[str, dict] = {"member_count": len(members)}
    per_modality = {}

    single_adm = {}
    for s in {m[0] for m in members}:
        windows = snapshot.admissions_for_subject(s)
        if len(windows) == 1:
            single_adm[s] = windows[0].hadm_id

    for modality, table_name, note_type in _STAT_SOURCES:
        if not snapshot.has_table(table_name):
            continue
        df = snapshot.table(table_name)
        if note_type is not None:
            df = df[df["note_type"] == note_type]
        counts = {m: 0 for m in members}
        for s, h in zip(df["subject_id"], df["hadm_id"]):
            if pd.isna(h):
                h = single_adm.get(int(s))
                if h is None:
                    continue
            key = (int(s), int(h))
            if key in member_set:
                counts[key] += 1
        values = sorted(counts.values())
        total = sum(values)
        with_any = sum(1 for v in values if v > 0)
        per_modality[modality] = {
            "members_with_records": with_any,
            "total_records": total,
            "coverage": (with_any / len(members)) if members else 0.0,
            "per_admission": {
                "min": float(values[0]) if values else 0.0,
                "median": _nearest_rank(values, 50),
                "p90": _nearest_rank(values, 90),
                "max": float(values[-1]) if values else 0.0,
            },
        }
    report["modalities"] = per_modality
    return report


def write_spec_json(spec: CohortSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_json_dict(), fh, indent=2)
        fh.write("\n")


def read_spec_json(path: str | Path) -> CohortSpec:
    with open(path, encoding="utf-8") as fh:
        return CohortSpec.from_json_dict(json.load(fh))
