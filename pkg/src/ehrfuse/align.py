"""Temporal alignment: binning, percentile widths, widening, imputation.

Every anchored event lands in exactly one (hadm_id, bin_index) cell.
Bins are half-open [start, start + width) with the discharge instant
clamped into the final bin, so the bins tile the closed admission
window without gaps or overlaps. Widths come from a nearest-rank
percentile over nonzero per-bin counts; bins that exceed the cutoff
are dropped (default) or truncated, and both outcomes are logged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from .assets import ModalityRecord, ResolvedRecords
from .cohort import Cohort
from .ingest import AdmissionWindow, DatasetSnapshot
from .schema import CANONICAL_DATETIME

GRANULARITIES = ("stay", "day", "hour")
IMPUTE_POLICIES = ("none", "forward_fill", "mean", "median")
SLOT_MODALITIES = ("ds", "rr", "cxr", "ecg", "waveform", "echo")
LAB_AGGREGATES = ("mean", "min", "max", "last", "count")

_BIN_WIDTH = {"day": timedelta(hours=24), "hour": timedelta(hours=1)}


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentPlan:
    granularity: str = "day"
    percentile_k: float = 100.0
    widths: dict = field(default_factory=dict)
    cutoffs: dict = field(default_factory=dict)
    imputation: dict = field(default_factory=dict)
    drop_over_threshold: bool = True

    def validate(self) -> None:
        if self.granularity not in GRANULARITIES:
            raise AlignmentError(
                f"granularity must be one of {GRANULARITIES}, got {self.granularity!r}")
        if not (0 < self.percentile_k <= 100):
            raise AlignmentError(
                f"percentile_k must be in (0, 100], got {self.percentile_k}")
        for item, policy in self.imputation.items():
            if policy not in IMPUTE_POLICIES:
                raise AlignmentError(
                    f"imputation for {item!r} must be one of {IMPUTE_POLICIES}, "
                    f"got {policy!r}")

    def to_json_dict(self) -> dict:
        return {
            "granularity": self.granularity,
            "percentile_k": self.percentile_k,
            "widths": dict(sorted(self.widths.items())),
            "cutoffs": dict(sorted(self.cutoffs.items())),
            "imputation": dict(sorted(self.imputation.items())),
            "drop_over_threshold": self.drop_over_threshold,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "AlignmentPlan":
        plan = cls(
            granularity=data.get("granularity", "day"),
            percentile_k=float(data.get("percentile_k", 100.0)),
            widths={str(k): int(v) for k, v in data.get("widths", {}).items()},
            cutoffs={str(k): int(v) for k, v in data.get("cutoffs", {}).items()},
            imputation={str(k): str(v) for k, v in data.get("imputation", {}).items()},
            drop_over_threshold=bool(data.get("drop_over_threshold", True)),
        )
        plan.validate()
        return plan


@dataclass(frozen=True)
class TemporalBin:
    subject_id: int
    hadm_id: int
    bin_index: int
    bin_start: datetime
    bin_end: datetime


def _bin_count(window: AdmissionWindow, granularity: str) -> int:
    if granularity == "stay":
        return 1
    width = _BIN_WIDTH[granularity]
    span = window.dischtime - window.admittime
    if span > timedelta(0) and span % width == timedelta(0):
        # dischtime on an exact boundary clamps into the previous bin
        return span // width
    return max(1, math.ceil(span / width))


def build_bins(window: AdmissionWindow, granularity: str) -> list[TemporalBin]:
    """Tile [admittime, dischtime] with half-open bins; last bin closes at dischtime."""
    if granularity not in GRANULARITIES:
        raise AlignmentError(
            f"granularity must be one of {GRANULARITIES}, got {granularity!r}")
    if granularity == "stay":
        return [TemporalBin(window.subject_id, window.hadm_id, 0,
                            window.admittime, window.dischtime)]
    width = _BIN_WIDTH[granularity]
    bins = []
    for i in range(_bin_count(window, granularity)):
        start = window.admittime + i * width
        end = min(start + width, window.dischtime)
        bins.append(TemporalBin(window.subject_id, window.hadm_id, i, start, end))
    return bins


def assign_bin(window: AdmissionWindow, t: datetime, granularity: str) -> int:
    if not window.contains(t):
        raise AlignmentError(
            f"time {t} outside admission {window.hadm_id} "
            f"[{window.admittime}, {window.dischtime}]")
    if granularity == "stay":
        return 0
    if granularity not in GRANULARITIES:
        raise AlignmentError(
            f"granularity must be one of {GRANULARITIES}, got {granularity!r}")
    width = _BIN_WIDTH[granularity]
    idx = (t - window.admittime) // width
    return min(idx, _bin_count(window, granularity) - 1)


def nearest_rank(sorted_counts: list[int], k: float) -> int:
    """kth percentile by rank = ceil(k/100 * n), 1-based over ascending values."""
    if not sorted_counts:
        return 0
    n = len(sorted_counts)
    rank = math.ceil(k / 100.0 * n)
    rank = min(max(rank, 1), n)
    return sorted_counts[rank - 1]


def compute_widths(per_bin_counts: dict[str, list[int]],
                   percentile_k: float) -> tuple[dict[str, int], dict[str, int]]:
    """Width per modality = nearest-rank percentile of its nonzero bin counts."""
    if not (0 < percentile_k <= 100):
        raise AlignmentError(
            f"percentile_k must be in (0, 100], got {percentile_k}")
    widths: dict[str, int] = {}
    cutoffs: dict[str, int] = {}
    for modality, counts in per_bin_counts.items():
        nonzero = sorted(c for c in counts if c > 0)
        cut = nearest_rank(nonzero, percentile_k)
        cutoffs[modality] = cut
        widths[modality] = cut
    return widths, cutoffs


@dataclass(frozen=True)
class BinEvent:
    """A slot occupant: a note section set, or one modality file."""
    modality: str
    event_time: datetime
    value: str
    sort_id: str


def _note_events(sections: pd.DataFrame, snapshot: DatasetSnapshot) -> list[tuple]:
    """(subject_id, hadm_id, modality, BinEvent) per note with a hadm anchor."""
    if sections.empty:
        return []
    notes = snapshot.table("notes").set_index("note_id")
    out = []
    for note_id, grp in sections.groupby("note_id", sort=True):
        meta = notes.loc[note_id]
        hadm = grp["hadm_id"].iloc[0]
        if pd.isna(hadm):
            continue
        modality = "ds" if meta["note_type"] == "DS" else "rr"
        out.append((
            int(grp["subject_id"].iloc[0]),
            int(hadm),
            modality,
            BinEvent(modality, meta["charttime"].to_pydatetime(),
                     str(note_id), str(note_id)),
        ))
    return out


def _asset_events(records: ResolvedRecords) -> list[tuple]:
    out = []
    for r in records.anchored:
        out.append((
            r.subject_id, r.hadm_id, r.modality,
            BinEvent(r.modality, r.event_time, r.file_path or "", r.sort_id),
        ))
    return out


def collect_bin_counts(snapshot: DatasetSnapshot, cohort: Cohort,
                       records: ResolvedRecords, sections: pd.DataFrame,
                       granularity: str) -> dict[str, list[int]]:
    """Per-bin event counts per slot modality, zero bins included."""
    windows = {w.hadm_id: w for s in cohort.subject_ids
               for w in snapshot.admissions_for_subject(s)}
    member_hadms = {h for _, h in cohort.members}
    counts: dict[str, dict[tuple[int, int], int]] = {m: {} for m in SLOT_MODALITIES}
    all_bins: set[tuple[int, int]] = set()
    for hadm_id, window in windows.items():
        if hadm_id not in member_hadms:
            continue
        for b in build_bins(window, granularity):
            all_bins.add((hadm_id, b.bin_index))
    for subject_id, hadm_id, modality, ev in (
            _note_events(sections, snapshot) + _asset_events(records)):
        if hadm_id not in windows or hadm_id not in member_hadms:
            continue
        idx = assign_bin(windows[hadm_id], ev.event_time, granularity)
        key = (hadm_id, idx)
        counts[modality][key] = counts[modality].get(key, 0) + 1
    return {
        m: [counts[m].get(b, 0) for b in sorted(all_bins)]
        for m in SLOT_MODALITIES
    }


@dataclass
class WideTable:
    frame: pd.DataFrame
    plan: AlignmentPlan
    log: pd.DataFrame
    imputed_mask: pd.DataFrame | None = None


def _lab_events(snapshot: DatasetSnapshot, cohort: Cohort) -> pd.DataFrame:
    labs = snapshot.table("labevents")
    member_hadms = {h for _, h in cohort.members}
    labs = labs[labs["hadm_id"].isin(member_hadms)]
    return labs


def _med_proc_events(snapshot: DatasetSnapshot, cohort: Cohort,
                     table_name: str) -> pd.DataFrame:
    if not snapshot.has_table(table_name):
        return pd.DataFrame()
    df = snapshot.table(table_name)
    member_hadms = {h for _, h in cohort.members}
    return df[df["hadm_id"].isin(member_hadms)]


def widen(snapshot: DatasetSnapshot, cohort: Cohort, records: ResolvedRecords,
          sections: pd.DataFrame, plan: AlignmentPlan) -> WideTable:
    """One row per surviving (hadm_id, bin); events left-packed into slots.

    Slot columns hold note_ids for ds/rr and file paths for the other
    modalities. Lab values aggregate to {itemid}_{mean,min,max,last,count}.
    Misses stay as nulls (pandas NA), never empty strings.
    """
    plan.validate()
    windows = {w.hadm_id: w for s in cohort.subject_ids
               for w in snapshot.admissions_for_subject(s)}
    member_hadms = sorted(h for _, h in cohort.members)

    # slot events grouped per (hadm, bin, modality)
    slot_events: dict[tuple[int, int, str], list[BinEvent]] = {}
    for subject_id, hadm_id, modality, ev in (
            _note_events(sections, snapshot) + _asset_events(records)):
        if hadm_id not in windows or hadm_id not in set(member_hadms):
            continue
        idx = assign_bin(windows[hadm_id], ev.event_time, plan.granularity)
        slot_events.setdefault((hadm_id, idx, modality), []).append(ev)

    labs = _lab_events(snapshot, cohort)
    lab_cells: dict[tuple[int, int, int], list[tuple[datetime, float]]] = {}
    for row in labs.itertuples(index=False):
        hadm_id = int(row.hadm_id)
        if hadm_id not in windows:
            continue
        t = row.charttime.to_pydatetime()
        idx = assign_bin(windows[hadm_id], t, plan.granularity)
        lab_cells.setdefault((hadm_id, idx, int(row.itemid)), []).append(
            (t, float(row.valuenum)))
    lab_itemids = sorted({k[2] for k in lab_cells})

    med_cols, proc_cols, med_values, proc_values = _encode_med_proc_cells(
        snapshot, cohort, windows, plan.granularity)

    rows = []
    log_rows = []
    imputed_rows = []
    active = [m for m in SLOT_MODALITIES if plan.widths.get(m, 0) > 0]
    for hadm_id in member_hadms:
        window = windows.get(hadm_id)
        if window is None:
            continue
        for b in build_bins(window, plan.granularity):
            key = (hadm_id, b.bin_index)
            cell: dict = {
                "subject_id": window.subject_id,
                "hadm_id": hadm_id,
                "bin_index": b.bin_index,
                "bin_start": b.bin_start.strftime(CANONICAL_DATETIME),
                "bin_end": b.bin_end.strftime(CANONICAL_DATETIME),
            }
            dropped = False
            truncated_mods = []
            for modality in SLOT_MODALITIES:
                events = slot_events.get((hadm_id, b.bin_index, modality), [])
                events.sort(key=lambda e: (e.event_time, e.sort_id))
                cutoff = plan.cutoffs.get(modality, 0)
                count = len(events)
                if count > cutoff:
                    log_rows.append((
                        window.subject_id, hadm_id, b.bin_index, modality,
                        count, cutoff,
                        "dropped" if plan.drop_over_threshold else "truncated",
                    ))
                    if plan.drop_over_threshold:
                        dropped = True
                    else:
                        truncated_mods.append(modality)
                        events = events[:plan.widths.get(modality, cutoff)]
                width = plan.widths.get(modality, 0)
                for j in range(1, width + 1):
                    cell[f"{modality}_{j}"] = (
                        events[j - 1].value if j <= len(events) else pd.NA)
                cell[f"{modality}_count"] = count
            if dropped:
                continue
            cell["overflow"] = int(bool(truncated_mods))
            for itemid in lab_itemids:
                obs = lab_cells.get((hadm_id, b.bin_index, itemid), [])
                obs.sort(key=lambda p: p[0])
                vals = [v for _, v in obs]
                prefix = f"lab_{itemid}"
                cell[f"{prefix}_mean"] = float(np.mean(vals)) if vals else pd.NA
                cell[f"{prefix}_min"] = min(vals) if vals else pd.NA
                cell[f"{prefix}_max"] = max(vals) if vals else pd.NA
                cell[f"{prefix}_last"] = vals[-1] if vals else pd.NA
                cell[f"{prefix}_count"] = len(vals)
            for col in med_cols:
                cell[col] = med_values.get((hadm_id, b.bin_index, col), 0.0)
            for col in proc_cols:
                cell[col] = proc_values.get((hadm_id, b.bin_index, col), 0)
            rows.append(cell)

    spine = ["subject_id", "hadm_id", "bin_index", "bin_start", "bin_end"]
    slot_cols = [f"{m}_{j}" for m in active
                 for j in range(1, plan.widths[m] + 1)]
    count_cols = [f"{m}_count" for m in SLOT_MODALITIES]
    lab_cols = [f"lab_{i}_{agg}" for i in lab_itemids for agg in LAB_AGGREGATES]
    columns = (spine + slot_cols + count_cols + ["overflow"]
               + lab_cols + med_cols + proc_cols)
    frame = pd.DataFrame(rows, columns=columns)
    frame = frame.sort_values(["subject_id", "hadm_id", "bin_index"],
                              kind="mergesort").reset_index(drop=True)
    log = pd.DataFrame(log_rows, columns=[
        "subject_id", "hadm_id", "bin_index", "modality",
        "count", "cutoff", "action",
    ]).sort_values(["subject_id", "hadm_id", "bin_index", "modality"],
                   kind="mergesort").reset_index(drop=True)
    return WideTable(frame=frame, plan=plan, log=log)


def _encode_med_proc_cells(snapshot: DatasetSnapshot, cohort: Cohort,
                           windows: dict[int, AdmissionWindow],
                           granularity: str):
    """Dose apportioned by bin overlap for meds; 1/0 overlap flags for procedures."""
    med_values: dict[tuple[int, int, str], float] = {}
    proc_values: dict[tuple[int, int, str], int] = {}
    med_cols: set[str] = set()
    proc_cols: set[str] = set()
    bins_by_hadm: dict[int, list[TemporalBin]] = {}

    def _bins(hadm_id: int, window: AdmissionWindow) -> list[TemporalBin]:
        cached = bins_by_hadm.get(hadm_id)
        if cached is None:
            cached = build_bins(window, granularity)
            bins_by_hadm[hadm_id] = cached
        return cached

    meds = _med_proc_events(snapshot, cohort, "inputevents")
    for row in (meds.itertuples(index=False) if not meds.empty else []):
        hadm_id = int(row.hadm_id)
        window = windows.get(hadm_id)
        if window is None:
            continue
        start = row.starttime.to_pydatetime()
        end = row.endtime.to_pydatetime()
        if not (window.contains(start) and window.contains(end)):
            continue
        col = f"med_{int(row.itemid)}_dose"
        med_cols.add(col)
        dose = float(row.dose)
        if end <= start:
            idx = assign_bin(window, start, granularity)
            key = (hadm_id, idx, col)
            med_values[key] = med_values.get(key, 0.0) + dose
            continue
        total = (end - start).total_seconds()
        for b in _bins(hadm_id, window):
            lo = max(start, b.bin_start)
            hi = min(end, b.bin_end)
            overlap = (hi - lo).total_seconds()
            if overlap <= 0:
                continue
            key = (hadm_id, b.bin_index, col)
            med_values[key] = med_values.get(key, 0.0) + dose * overlap / total

    procs = _med_proc_events(snapshot, cohort, "procedureevents")
    for row in (procs.itertuples(index=False) if not procs.empty else []):
        hadm_id = int(row.hadm_id)
        window = windows.get(hadm_id)
        if window is None:
            continue
        start = row.starttime.to_pydatetime()
        end = start if pd.isna(row.endtime) else row.endtime.to_pydatetime()
        if not window.contains(start):
            continue
        end = min(end, window.dischtime)
        col = f"proc_{int(row.itemid)}_on"
        proc_cols.add(col)
        if start == end:
            # instant events hit their own bin
            idx = assign_bin(window, start, granularity)
            proc_values[(hadm_id, idx, col)] = 1
            continue
        for b in _bins(hadm_id, window):
            # intervals flag every overlapped bin
            if max(start, b.bin_start) < min(end, b.bin_end) \
                    or (start == b.bin_start == end):
                proc_values[(hadm_id, b.bin_index, col)] = 1
    return sorted(med_cols), sorted(proc_cols), med_values, proc_values


def impute(table: WideTable) -> WideTable:
    """Fill lab `{item}_mean` nulls per plan.imputation; flag imputed cells.

    forward_fill stays inside one hadm_id; mean/median pool observed
    values across the whole cohort. Idempotent: a second call changes
    nothing because every null it can fill is already filled.
    """
    plan = table.plan
    frame = table.frame.copy()
    mask_cols = {}
    for item, policy in sorted(plan.imputation.items()):
        col = f"lab_{item}_mean"
        if col not in frame.columns or policy == "none":
            continue
        series = pd.to_numeric(frame[col], errors="coerce")
        before = series.isna()
        if policy == "forward_fill":
            filled = series.groupby(frame["hadm_id"]).ffill()
        elif policy == "mean":
            observed = series.dropna()
            filled = series.fillna(observed.mean()) if len(observed) else series
        elif policy == "median":
            observed = series.dropna()
            filled = series.fillna(observed.median()) if len(observed) else series
        else:
            raise AlignmentError(f"unknown imputation policy {policy!r}")
        frame[col] = filled
        flag = (before & filled.notna()).astype(int)
        mask_cols[f"lab_{item}_imputed"] = flag
    for name, flag in mask_cols.items():
        if name in frame.columns:
            frame[name] = np.maximum(frame[name].to_numpy(), flag.to_numpy())
        else:
            frame[name] = flag
    imputed_mask = frame[[c for c in frame.columns if c.endswith("_imputed")]].copy()
    return WideTable(frame=frame, plan=plan, log=table.log,
                     imputed_mask=imputed_mask)


def write_plan_json(plan: AlignmentPlan, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(plan.to_json_dict(), indent=2, sort_keys=True) + "\n")


def read_plan_json(path: str | Path) -> AlignmentPlan:
    return AlignmentPlan.from_json_dict(json.loads(Path(path).read_text()))


def plan_with_widths(snapshot: DatasetSnapshot, cohort: Cohort,
                     records: ResolvedRecords, sections: pd.DataFrame,
                     plan: AlignmentPlan) -> AlignmentPlan:
    """Fill widths/cutoffs from observed per-bin counts."""
    plan.validate()
    counts = collect_bin_counts(snapshot, cohort, records, sections,
                                plan.granularity)
    widths, cutoffs = compute_widths(counts, plan.percentile_k)
    return replace(plan, widths=widths, cutoffs=cutoffs)
