"""Table schema registry for the MIMIC-IV-shaped CSV corpus.

Every table the loader understands is declared here with its ordered
column list and per-column semantic type. The loader never guesses
dtypes; anything that does not parse under its declared type becomes a
reject-report row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Semantic column types. "identifier" is reserved for spine columns;
# everything else (itemids, ICD codes) is "code".
IDENTIFIER = "identifier"
DATETIME = "datetime"
CODE = "code"
NUMERIC = "numeric"
TEXT = "text"
PATH = "path"
ENUM = "enum"

# The identifier spine shared across modalities.
IDENTIFIER_COLUMNS = {
    "subject_id",
    "hadm_id",
    "note_id",
    "study_id",
    "dicom_id",
    "section_id",
}

# Spine identifiers stored as integers; the rest are opaque strings.
INT_IDENTIFIERS = {"subject_id", "hadm_id", "study_id"}

CANONICAL_DATETIME = "%Y-%m-%d %H:%M:%S"

CXR_VIEW_POSITIONS = ("PA", "AP", "LATERAL")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    semantic: str
    required: bool = True
    enum_values: tuple[str, ...] = ()
    nonnegative: bool = False  # numeric columns only


@dataclass(frozen=True)
class TableSpec:
    name: str
    columns: tuple[ColumnSpec, ...]
    required: bool = True

    def column(self, name: str) -> ColumnSpec:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(f"table {self.name} has no column {name}")

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


def _col(name, semantic, required=True, enum_values=(), nonnegative=False):
    return ColumnSpec(name, semantic, required, tuple(enum_values), nonnegative)


# Required tables: the nine the rest of the pipeline assumes exist.
# Optional tables: code dictionary plus medication/procedure events,
# which feed dose/on-off encoding when present.
_TABLES = [
    TableSpec(
        "admissions",
        (
            _col("subject_id", IDENTIFIER),
            _col("hadm_id", IDENTIFIER),
            _col("admittime", DATETIME),
            _col("dischtime", DATETIME),
            _col("hospital_expire_flag", ENUM, enum_values=("0", "1")),
        ),
    ),
    TableSpec(
        "patients",
        (
            _col("subject_id", IDENTIFIER),
            _col("gender", ENUM, enum_values=("M", "F")),
            _col("anchor_age", NUMERIC),
        ),
    ),
    TableSpec(
        "diagnoses_icd",
        (
            _col("subject_id", IDENTIFIER),
            _col("hadm_id", IDENTIFIER),
            _col("seq_num", NUMERIC),
            _col("icd_code", CODE),
            _col("icd_version", ENUM, enum_values=("9", "10")),
        ),
    ),
    TableSpec(
        "labevents",
        (
            _col("subject_id", IDENTIFIER),
            _col("hadm_id", IDENTIFIER),
            _col("itemid", CODE),
            _col("charttime", DATETIME),
            _col("valuenum", NUMERIC),
        ),
    ),
    TableSpec(
        "notes",
        (
            _col("note_id", IDENTIFIER),
            _col("subject_id", IDENTIFIER),
            _col("hadm_id", IDENTIFIER, required=False),
            _col("note_type", ENUM, enum_values=("DS", "RR")),
            _col("charttime", DATETIME),
            _col("study_id", IDENTIFIER, required=False),
            _col("text", TEXT),
        ),
    ),
    TableSpec(
        "cxr_metadata",
        (
            _col("subject_id", IDENTIFIER),
            _col("hadm_id", IDENTIFIER, required=False),
            _col("study_id", IDENTIFIER),
            _col("dicom_id", IDENTIFIER),
            _col("study_datetime", DATETIME),
            _col("view_position", ENUM, enum_values=CXR_VIEW_POSITIONS),
        ),
    ),
    TableSpec(
        "ecg_metadata",
        (
            _col("subject_id", IDENTIFIER),
            _col("hadm_id", IDENTIFIER, required=False),
            _col("study_id", IDENTIFIER),
            _col("ecg_time", DATETIME),
            _col("lead_count", NUMERIC),
            _col("duration_s", NUMERIC),
        ),
    ),
    TableSpec(
        "echo_metadata",
        (
            _col("subject_id", IDENTIFIER),
            _col("hadm_id", IDENTIFIER, required=False),
            _col("study_id", IDENTIFIER),
            _col("acquisition_time", DATETIME),
        ),
    ),
    TableSpec(
        "waveform_metadata",
        (
            _col("subject_id", IDENTIFIER),
            _col("hadm_id", IDENTIFIER, required=False),
            _col("study_id", IDENTIFIER),
            _col("start_time", DATETIME),
            _col("duration_s", NUMERIC),
        ),
    ),
    TableSpec(
        "d_icd_diagnoses",
        (
            _col("icd_code", CODE),
            _col("icd_version", ENUM, enum_values=("9", "10")),
            _col("long_title", TEXT),
        ),
        required=False,
    ),
    TableSpec(
        "inputevents",
        (
            _col("subject_id", IDENTIFIER),
            _col("hadm_id", IDENTIFIER),
            _col("itemid", CODE),
            _col("starttime", DATETIME),
            _col("endtime", DATETIME),
            _col("dose", NUMERIC, nonnegative=True),
        ),
        required=False,
    ),
    TableSpec(
        "procedureevents",
        (
            _col("subject_id", IDENTIFIER),
            _col("hadm_id", IDENTIFIER),
            _col("itemid", CODE),
            _col("starttime", DATETIME),
            _col("endtime", DATETIME, required=False),
        ),
        required=False,
    ),
]


class SchemaRegistry:
    """Lookup of every registered table spec, keyed by table name."""

    def __init__(self, tables: list[TableSpec] | None = None):
        self._tables = {t.name: t for t in (tables if tables is not None else _TABLES)}

    def table(self, name: str) -> TableSpec:
        if name not in self._tables:
            raise KeyError(f"unknown table: {name}")
        return self._tables[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tables

    @property
    def table_names(self) -> list[str]:
        return list(self._tables)

    @property
    def required_tables(self) -> list[str]:
        return [n for n, t in self._tables.items() if t.required]

    @property
    def optional_tables(self) -> list[str]:
        return [n for n, t in self._tables.items() if not t.required]


DEFAULT_REGISTRY = SchemaRegistry()
