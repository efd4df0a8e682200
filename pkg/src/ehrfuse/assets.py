"""Linkage of waveform/ECG/CXR/echo metadata to admissions and files.

Each metadata row becomes a ModalityRecord carrying a deterministic
relative file path. Rows without a hadm_id are anchored by locating the
admission window containing their timestamp; rows that land in no
window are kept in a separate unanchored list so nothing disappears
silently. Raw pixels and signals are never loaded, only path strings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import pandas as pd

from .cohort import Cohort
from .ingest import DatasetSnapshot, admission_for
from .paths import PathConvention, load_path_convention
from .schema import CXR_VIEW_POSITIONS

ASSET_MODALITIES = ("ecg", "waveform", "cxr", "echo")

# table name, timestamp column per modality
_MODALITY_TABLES = {
    "cxr": ("cxr_metadata", "study_datetime"),
    "ecg": ("ecg_metadata", "ecg_time"),
    "waveform": ("waveform_metadata", "start_time"),
    "echo": ("echo_metadata", "acquisition_time"),
}


class AssetError(ValueError):
    pass


@dataclass(frozen=True)
class ModalityRecord:
    modality: str
    subject_id: int
    hadm_id: int | None
    study_id: int | None
    dicom_id: str | None
    event_time: datetime
    file_path: str | None
    attrs: dict = field(default_factory=dict)

    @property
    def sort_id(self) -> str:
        """Stable tiebreaker for same-timestamp ordering."""
        return f"{self.study_id or ''}|{self.dicom_id or ''}"


@dataclass
class ResolvedRecords:
    anchored: list[ModalityRecord]
    unanchored: list[ModalityRecord]

    def __iter__(self):
        return iter(self.anchored)


def resolve_records(snapshot: DatasetSnapshot, cohort: Cohort,
                    modalities: set[str] | None = None,
                    view_filter: set[str] | None = None,
                    convention: PathConvention | None = None) -> ResolvedRecords:
    """One record per metadata row of a cohort subject.

    hadm_id comes from the metadata when present, otherwise from the
    admission window containing the event time; view_filter restricts
    cxr records only.
    """
    if modalities is None:
        modalities = set(ASSET_MODALITIES)
    unknown = modalities - set(ASSET_MODALITIES)
    if unknown:
        raise AssetError(f"unknown modalities: {sorted(unknown)}")
    if view_filter:
        bad_views = set(view_filter) - set(CXR_VIEW_POSITIONS)
        if bad_views:
            raise AssetError(f"unknown view positions: {sorted(bad_views)}")
    if convention is None:
        convention = load_path_convention(snapshot.root)

    subjects = cohort.subject_ids
    anchored: list[ModalityRecord] = []
    unanchored: list[ModalityRecord] = []

    for modality in sorted(modalities):
        table_name, time_col = _MODALITY_TABLES[modality]
        df = snapshot.table(table_name)
        df = df[df["subject_id"].isin(subjects)]
        for row in df.itertuples(index=False):
            subject_id = int(row.subject_id)
            event_time = getattr(row, time_col).to_pydatetime()
            if modality == "cxr":
                if view_filter and row.view_position not in view_filter:
                    continue
                attrs = {"view_position": row.view_position}
                dicom_id = row.dicom_id
            elif modality == "ecg":
                attrs = {"lead_count": int(row.lead_count),
                         "duration_s": float(row.duration_s)}
                dicom_id = None
            elif modality == "waveform":
                attrs = {"duration_s": float(row.duration_s)}
                dicom_id = None
            else:
                attrs = {}
                dicom_id = None

            if pd.isna(row.hadm_id):
                window = admission_for(snapshot, subject_id, event_time)
                hadm_id = window.hadm_id if window else None
            else:
                hadm_id = int(row.hadm_id)

            record = ModalityRecord(
                modality=modality,
                subject_id=subject_id,
                hadm_id=hadm_id,
                study_id=int(row.study_id),
                dicom_id=dicom_id,
                event_time=event_time,
                file_path=convention.render(modality, subject_id=subject_id,
                                            study_id=int(row.study_id),
                                            dicom_id=dicom_id),
                attrs=attrs,
            )
            (anchored if hadm_id is not None else unanchored).append(record)

    return ResolvedRecords(anchored, unanchored)


def rotation_count(records: ResolvedRecords | list[ModalityRecord],
                   subject_id: int, study_id: int) -> dict[str, int]:
    """Images per view position within one imaging study."""
    pool = records.anchored + records.unanchored \
        if isinstance(records, ResolvedRecords) else list(records)
    counts: dict[str, int] = {}
    found = False
    for r in pool:
        if r.modality == "cxr" and r.subject_id == subject_id and r.study_id == study_id:
            found = True
            view = r.attrs.get("view_position", "")
            counts[view] = counts.get(view, 0) + 1
    if not found:
        raise AssetError(f"no cxr study {study_id} for subject {subject_id}")
    return counts


def verify_paths(records: ResolvedRecords | list[ModalityRecord],
                 root: str | Path) -> dict:
    """Existence check per record; report only, never raises."""
    root = Path(root)
    pool = records.anchored + records.unanchored \
        if isinstance(records, ResolvedRecords) else list(records)
    missing = []
    for r in pool:
        if r.file_path and not (root / r.file_path).exists():
            missing.append(r.file_path)
    return {
        "total": len(pool),
        "exists": len(pool) - len(missing),
        "missing": len(missing),
        "missing_paths": sorted(missing),
    }


def unanchored_frame(records: ResolvedRecords) -> pd.DataFrame:
    rows = [
        (r.modality, r.subject_id, r.study_id, r.dicom_id or "",
         r.event_time.strftime("%Y-%m-%d %H:%M:%S"), r.file_path)
        for r in sorted(records.unanchored,
                        key=lambda r: (r.modality, r.subject_id, r.sort_id))
    ]
    return pd.DataFrame(rows, columns=[
        "modality", "subject_id", "study_id", "dicom_id", "event_time", "file_path",
    ])
