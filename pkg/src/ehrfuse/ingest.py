"""CSV loading and validation into an immutable DatasetSnapshot.

Rows that fail their column's declared type, the admission-order rule,
or the hadm_id foreign key are collected into a reject report instead
of aborting the load; the load only aborts when a required table or
column is missing outright, or when the reject fraction of a table
crosses the configured ceiling.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from .schema import (
    CANONICAL_DATETIME,
    CODE,
    DATETIME,
    DEFAULT_REGISTRY,
    ENUM,
    IDENTIFIER,
    INT_IDENTIFIERS,
    NUMERIC,
    SchemaRegistry,
    TableSpec,
)

_DT_RE = re.compile(r"^\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}$")
_INT_RE = re.compile(r"^\d+$")

DEFAULT_MAX_REJECT_FRACTION = 0.05


class IngestError(ValueError):
    """Unrecoverable load failure (missing table/column, reject flood)."""


class OverlappingAdmissionsError(ValueError):
    def __init__(self, subject_id: int, t: datetime, hadm_ids: list[int]):
        self.subject_id = subject_id
        self.hadm_ids = hadm_ids
        super().__init__(
            f"subject {subject_id}: overlapping admission windows at {t}: "
            f"hadm_ids {sorted(hadm_ids)}"
        )


@dataclass(frozen=True)
class RejectRow:
    table: str
    row: int          # 1-based data row number in the source CSV
    column: str
    reason: str


@dataclass(frozen=True)
class AdmissionWindow:
    subject_id: int
    hadm_id: int
    admittime: datetime
    dischtime: datetime

    def contains(self, t: datetime) -> bool:
        # Closed on both ends: [admittime, dischtime].
        return self.admittime <= t <= self.dischtime


@dataclass(frozen=True)
class DatasetSnapshot:
    root: Path
    version_tag: str
    tables: dict[str, pd.DataFrame]
    rejects: list[RejectRow]
    registry: SchemaRegistry
    _admissions_by_subject: dict[int, list[AdmissionWindow]] = field(repr=False, default_factory=dict)

    def table(self, name: str) -> pd.DataFrame:
        if name not in self.tables:
            raise KeyError(f"table not loaded: {name}")
        return self.tables[name]

    def has_table(self, name: str) -> bool:
        return name in self.tables

    @property
    def subject_ids(self) -> list[int]:
        return sorted(self._admissions_by_subject)

    def admissions_for_subject(self, subject_id: int) -> list[AdmissionWindow]:
        return list(self._admissions_by_subject.get(subject_id, []))

    @property
    def admission_windows(self) -> dict[int, AdmissionWindow]:
        return {
            w.hadm_id: w
            for windows in self._admissions_by_subject.values()
            for w in windows
        }


def _parse_column(table: TableSpec, col_name: str, raw: pd.Series,
                  rejects: list[RejectRow], bad_rows: np.ndarray):
    """Convert one raw string column per its semantic type.

    Marks failing rows in bad_rows and appends their reasons; returns
    the converted series (invalid cells left as NA, row dropped later).
    """
    spec = table.column(col_name)
    stripped = raw.str.strip()
    empty = stripped == ""

    if spec.required:
        for idx in stripped.index[empty]:
            rejects.append(RejectRow(table.name, idx + 1, col_name, "missing required value"))
        bad_rows[empty.to_numpy()] = True

    def flag(mask: pd.Series, reason: str) -> None:
        mask = mask & ~empty
        for idx in stripped.index[mask]:
            rejects.append(RejectRow(table.name, idx + 1, col_name, reason))
        bad_rows[mask.to_numpy()] = True

    if spec.semantic == IDENTIFIER and col_name in INT_IDENTIFIERS:
        ok = stripped.str.match(_INT_RE) | empty
        flag(~ok, "not an integer identifier")
        out = pd.to_numeric(stripped.where(~empty & ok), errors="coerce").astype("Int64")
    elif spec.semantic == IDENTIFIER:
        out = stripped.where(~empty, None)
    elif spec.semantic == DATETIME:
        ok = stripped.str.match(_DT_RE) | empty
        parsed = pd.to_datetime(stripped.where(ok & ~empty), format=CANONICAL_DATETIME,
                                errors="coerce")
        ok = ok & ~(parsed.isna() & ~empty & ok)
        flag(~ok, "datetime not in 'YYYY-MM-DD HH:MM:SS' format")
        out = parsed.where(ok)
    elif spec.semantic == NUMERIC:
        parsed = pd.to_numeric(stripped.where(~empty), errors="coerce")
        bad = parsed.isna() & ~empty
        flag(bad, "not numeric")
        if spec.nonnegative:
            neg = parsed < 0
            flag(neg, "negative value")
            parsed = parsed.where(~neg)
        out = parsed
    elif spec.semantic == ENUM:
        ok = stripped.isin(spec.enum_values) | empty
        flag(~ok, f"not one of {list(spec.enum_values)}")
        out = stripped.where(ok & ~empty, None)
    else:  # CODE, TEXT, PATH: raw strings (codes normalized downstream)
        out = raw if spec.semantic != CODE else stripped
        out = out.where(~empty, None)
    return out


def _load_table(path: Path, spec: TableSpec, rejects: list[RejectRow],
                max_reject_fraction: float) -> tuple[pd.DataFrame, int]:
    """Parse and validate one table; returns (clean frame, source row count)."""
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing_cols = [c.name for c in spec.columns if c.name not in raw.columns]
    if missing_cols:
        raise IngestError(f"table {spec.name}: missing required columns {missing_cols}")
    raw = raw[[c.name for c in spec.columns]]  # normalize column order

    n = len(raw)
    bad_rows = np.zeros(n, dtype=bool)
    converted = {}
    before = len(rejects)
    for col in spec.columns:
        converted[col.name] = _parse_column(spec, col.name, raw[col.name], rejects, bad_rows)

    df = pd.DataFrame(converted, columns=spec.column_names)
    df = df.loc[~bad_rows]

    if n > 0 and bad_rows.sum() / n > max_reject_fraction:
        n_bad = int(bad_rows.sum())
        reasons = sorted({r.reason for r in rejects[before:]})
        raise IngestError(
            f"table {spec.name}: {n_bad}/{n} rows rejected "
            f"(> {max_reject_fraction:.0%} ceiling); reasons: {reasons}"
        )
    return df, n


def _apply_table_rules(name: str, df: pd.DataFrame, valid_hadm: set[int] | None,
                       rejects: list[RejectRow], max_reject_fraction: float,
                       n_source: int) -> pd.DataFrame:
    drop = pd.Series(False, index=df.index)

    if name == "admissions":
        bad_order = ~(df["admittime"] < df["dischtime"])
        for idx in df.index[bad_order]:
            rejects.append(RejectRow(name, idx + 1, "dischtime",
                                     "dischtime not after admittime"))
        drop |= bad_order
    elif valid_hadm is not None and "hadm_id" in df.columns:
        present = df["hadm_id"].notna()
        unknown = present & ~df["hadm_id"].isin(valid_hadm)
        for idx in df.index[unknown]:
            rejects.append(RejectRow(name, idx + 1, "hadm_id",
                                     "hadm_id not found in admissions"))
        drop |= unknown

    df = df.loc[~drop]
    if n_source > 0 and (n_source - len(df)) / n_source > max_reject_fraction:
        raise IngestError(
            f"table {name}: {n_source - len(df)}/{n_source} rows rejected "
            f"(> {max_reject_fraction:.0%} ceiling)"
        )
    return df


def load_snapshot(root: str | Path, version_tag: str = "mimic-iv-3.1",
                  registry: SchemaRegistry = DEFAULT_REGISTRY,
                  max_reject_fraction: float = DEFAULT_MAX_REJECT_FRACTION) -> DatasetSnapshot:
    """Load and validate every registered table found under root."""
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"corpus root not found: {root}")

    missing = [n for n in registry.required_tables if not (root / f"{n}.csv").exists()]
    if missing:
        raise IngestError(f"missing required tables: {missing}")

    rejects: list[RejectRow] = []
    tables: dict[str, pd.DataFrame] = {}
    source_counts: dict[str, int] = {}
    for name in registry.table_names:
        path = root / f"{name}.csv"
        if not path.exists():
            continue  # optional table absent
        spec = registry.table(name)
        tables[name], source_counts[name] = _load_table(
            path, spec, rejects, max_reject_fraction)

    # admissions first: its surviving hadm set is the foreign key target.
    tables["admissions"] = _apply_table_rules(
        "admissions", tables["admissions"], None, rejects,
        max_reject_fraction, source_counts["admissions"])
    valid_hadm = set(tables["admissions"]["hadm_id"].astype(int))
    for name in tables:
        if name == "admissions":
            continue
        tables[name] = _apply_table_rules(name, tables[name], valid_hadm, rejects,
                                          max_reject_fraction, source_counts[name])

    by_subject: dict[int, list[AdmissionWindow]] = {}
    adm = tables["admissions"].sort_values(["subject_id", "admittime", "hadm_id"])
    for row in adm.itertuples(index=False):
        w = AdmissionWindow(int(row.subject_id), int(row.hadm_id),
                            row.admittime.to_pydatetime(), row.dischtime.to_pydatetime())
        by_subject.setdefault(w.subject_id, []).append(w)

    rejects.sort(key=lambda r: (r.table, r.row, r.column))
    return DatasetSnapshot(
        root=root,
        version_tag=version_tag,
        tables=tables,
        rejects=rejects,
        registry=registry,
        _admissions_by_subject=by_subject,
    )


def admission_for(snapshot: DatasetSnapshot, subject_id: int,
                  t: datetime) -> AdmissionWindow | None:
    """The unique admission of subject_id whose closed window contains t.

    Raises OverlappingAdmissionsError when more than one window claims t
    (a data integrity violation we refuse to guess through).
    """
    hits = [w for w in snapshot.admissions_for_subject(subject_id) if w.contains(t)]
    if not hits:
        return None
    if len(hits) > 1:
        raise OverlappingAdmissionsError(subject_id, t, [w.hadm_id for w in hits])
    return hits[0]


def serialize_table(snapshot: DatasetSnapshot, name: str) -> str:
    """Render a loaded table back to canonical CSV text."""
    df = snapshot.table(name).copy()
    spec = snapshot.registry.table(name)
    for col in spec.columns:
        if col.semantic == DATETIME:
            df[col.name] = df[col.name].map(
                lambda v: "" if pd.isna(v) else v.strftime(CANONICAL_DATETIME))
        elif col.semantic == NUMERIC:
            df[col.name] = df[col.name].map(
                lambda v: "" if pd.isna(v) else repr(float(v)).removesuffix(".0"))
        elif col.name in INT_IDENTIFIERS:
            df[col.name] = df[col.name].map(lambda v: "" if pd.isna(v) else str(int(v)))
        else:
            df[col.name] = df[col.name].map(lambda v: "" if v is None else str(v))
    import csv as _csv
    import io
    buf = io.StringIO()
    w = _csv.writer(buf, lineterminator="\n")
    w.writerow(spec.column_names)
    w.writerows(df.itertuples(index=False, name=None))
    return buf.getvalue()


def rejects_frame(snapshot: DatasetSnapshot) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.table, r.row, r.column, r.reason) for r in snapshot.rejects],
        columns=["table", "row", "column", "reason"],
    )


def write_rejects_csv(snapshot: DatasetSnapshot, path: str | Path) -> None:
    rejects_frame(snapshot).to_csv(path, index=False, lineterminator="\n")
