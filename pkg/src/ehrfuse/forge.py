"""Deterministic synthetic corpus generator.

Emits a desk-scale corpus in the registered MIMIC-IV-shaped CSV layout
together with a ground-truth manifest, so cohorting, sectionizing,
linkage and alignment are all testable without restricted data. The
same seed always produces byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

from .paths import DEFAULT_PATH_CONVENTION, PathConvention
from .schema import CANONICAL_DATETIME

MIN_STAY_HOURS = 6.0
MAX_STAY_HOURS = 21 * 24.0

# Default diagnosis pool: (code, version, long_title). Undotted codes,
#MIMIC-style; titles feed name-based cohort matching.
DEFAULT_ICD_POOL = [
    ("42731", 9, "Atrial fibrillation"),
    ("4280", 9, "Congestive heart failure, unspecified"),
    ("41401", 9, "Coronary atherosclerosis of native coronary artery"),
    ("41071", 9, "Subendocardial infarction, initial episode of care"),
    ("0389", 9, "Unspecified septicemia"),
    ("99591", 9, "Sepsis"),
    ("99592", 9, "Severe sepsis"),
    ("78552", 9, "Septic shock"),
    ("5849", 9, "Acute kidney failure, unspecified"),
    ("486", 9, "Pneumonia, organism unspecified"),
    ("25000", 9, "Diabetes mellitus without mention of complication"),
    ("4019", 9, "Unspecified essential hypertension"),
    ("I4891", 10, "Unspecified atrial fibrillation"),
    ("I509", 10, "Heart failure, unspecified"),
    ("I2510", 10, "Atherosclerotic heart disease of native coronary artery"),
    ("I214", 10, "Non-ST elevation myocardial infarction"),
    ("A419", 10, "Sepsis, unspecified organism"),
    ("A403", 10, "Sepsis due to Streptococcus pneumoniae"),
    ("R6521", 10, "Severe sepsis with septic shock"),
    ("N179", 10, "Acute kidney failure, unspecified"),
    ("J189", 10, "Pneumonia, unspecified organism"),
    ("E119", 10, "Type 2 diabetes mellitus without complications"),
    ("I10", 10, "Essential (primary) hypertension"),
]

DS_HEADERS = [
    "Chief Complaint",
    "History of Present Illness",
    "Past Medical History",
    "Social History",
    "Family History",
    "Medications on Admission",
    "Physical Exam",
    "Discharge Diagnosis",
]
RR_HEADERS = ["Indication", "Comparison", "Technique", "Findings", "Impression"]

DEFAULT_EVENT_RATES = {
    "lab": 18.0,        # lab rows per admission-day
    "cxr": 0.8,         # imaging studies per admission-day (1-3 images each)
    "rr": 0.6,          # standalone radiology reports per admission-day
    "ecg": 1.0,
    "waveform": 0.5,
    "echo": 0.25,
    "med": 3.0,
    "proc": 1.0,
}

LAB_ITEMS = {
    "50912": (0.4, 3.5),    # creatinine
    "50971": (3.0, 6.0),    # potassium
    "50983": (130.0, 150.0),  # sodium
    "51221": (24.0, 48.0),  # hematocrit
    "51301": (3.0, 18.0),   # white blood cells
}
MED_ITEMS = ["221906", "222168", "225152", "221749"]
PROC_ITEMS = ["225792", "225794", "224385"]

_VOCAB = (
    "patient stable alert oriented denies reports mild moderate severe acute "
    "chronic chest pain dyspnea edema fever cough nausea dizziness fatigue "
    "bilateral lower extremity pulmonary cardiac renal hepatic elevated normal "
    "unremarkable improved worsening tolerating ambulating medication therapy "
    "daily history prior admission discharge follow clinic monitor continue "
    "started discontinued dose increased decreased findings consistent with "
    "without evidence of effusion consolidation infiltrate opacity silhouette "
    "contour unchanged comparison study exam limited otherwise intact noted"
).split()


class ForgeError(ValueError):
    """Invalid generator configuration, reported with the field name."""


@dataclass
class ForgeConfig:
    seed: int = 0
    n_subjects: int = 10
    max_admissions_per_subject: int = 3
    event_rates: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_EVENT_RATES))
    note_header_lexicon: list[str] = field(default_factory=lambda: DS_HEADERS + RR_HEADERS)
    icd_pool: list[tuple[str, int, str]] = field(default_factory=lambda: list(DEFAULT_ICD_POOL))
    date_range: tuple[datetime, datetime] = (datetime(2019, 1, 1), datetime(2023, 12, 31))
    missing_hadm_fraction: float = 0.10  # cxr/ecg rows emitted without hadm_id
    write_asset_placeholders: bool = True

    def validate(self) -> None:
        if self.n_subjects < 1:
            raise ForgeError("n_subjects must be ≥ 1")
        if self.max_admissions_per_subject < 1:
            raise ForgeError("max_admissions_per_subject must be ≥ 1")
        if not (0.0 <= self.missing_hadm_fraction <= 1.0):
            raise ForgeError("missing_hadm_fraction must be in [0, 1]")
        if self.date_range[0] >= self.date_range[1]:
            raise ForgeError("date_range start must precede end")
        span_h = (self.date_range[1] - self.date_range[0]).total_seconds() / 3600.0
        if span_h < MAX_STAY_HOURS * 2:
            raise ForgeError("date_range too narrow for admission windows")
        for name, rate in self.event_rates.items():
            if rate < 0:
                raise ForgeError(f"event_rates[{name}] must be ≥ 0")
        if not self.icd_pool:
            raise ForgeError("icd_pool must not be empty")
        if not self.note_header_lexicon:
            raise ForgeError("note_header_lexicon must not be empty")


@dataclass
class GroundTruthManifest:
    """Everything the generator knows, for oracle-style comparisons.

    admissions: subject_id -> [{hadm_id, admittime, dischtime}]
    events: hadm_id -> modality -> list of event dicts (time, ids, values)
    notes: note_id -> {"sections": [(canonical_name, body)], "token_count": int}
    icd_members: "code|version" -> sorted [(subject_id, hadm_id)]
    """

    config_echo: dict
    admissions: dict[int, list[dict]] = field(default_factory=dict)
    events: dict[int, dict[str, list[dict]]] = field(default_factory=dict)
    notes: dict[str, dict] = field(default_factory=dict)
    icd_members: dict[str, list[tuple[int, int]]] = field(default_factory=dict)

    @property
    def n_subjects(self) -> int:
        return len(self.admissions)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config_echo,
            "admissions": {str(s): rows for s, rows in self.admissions.items()},
            "events": {str(h): evs for h, evs in self.events.items()},
            "notes": self.notes,
            "icd_members": {k: [list(m) for m in v] for k, v in self.icd_members.items()},
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "GroundTruthManifest":
        m = cls(config_echo=data["config"])
        m.admissions = {int(s): rows for s, rows in data["admissions"].items()}
        m.events = {int(h): evs for h, evs in data["events"].items()}
        m.notes = data["notes"]
        m.icd_members = {
            k: [(int(a), int(b)) for a, b in v] for k, v in data["icd_members"].items()
        }
        return m


def load_manifest(path: str | Path) -> GroundTruthManifest:
    with open(path, encoding="utf-8") as fh:
        return GroundTruthManifest.from_json_dict(json.load(fh))


def forge_note(headers: list[str], bodies: list[str]) -> str:
    """Render (header, body) pairs as 'Header: body' lines, in order."""
    if len(headers) != len(bodies):
        raise ForgeError(
            f"headers/bodies length mismatch: {len(headers)} != {len(bodies)}"
        )
    return "".join(f"{h}: {b}\n" for h, b in zip(headers, bodies))


def _fmt(t: datetime) -> str:
    return t.strftime(CANONICAL_DATETIME)


def _poisson(rng, lam: float) -> int:
    # Knuth below lambda=60, normal approximation above (exp(-lam)
    # underflows long before the approximation error matters here).
    if lam <= 0:
        return 0
    if lam < 60.0:
        threshold = math.exp(-lam)
        k, p = 0, 1.0
        while True:
            p *= rng.random()
            if p <= threshold:
                return k
            k += 1
    return max(0, round(rng.gauss(lam, math.sqrt(lam))))


def _uniform_time(rng, start: datetime, end: datetime) -> datetime:
    # Second resolution, both endpoints reachable.
    span = int((end - start).total_seconds())
    return start + timedelta(seconds=rng.randint(0, span))


def _words(rng, n: int) -> str:
    return " ".join(rng.choice(_VOCAB) for _ in range(n))


class _CorpusWriter:
    """Accumulates rows per table; writes canonical RFC-4180 CSVs."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.rows: dict[str, list[list]] = {}
        self.headers: dict[str, list[str]] = {}

    def table(self, name: str, header: list[str]) -> None:
        self.headers[name] = header
        self.rows[name] = []

    def add(self, name: str, row: list) -> None:
        self.rows[name].append(row)

    def flush(self) -> None:
        for name, header in self.headers.items():
            with open(self.out_dir / f"{name}.csv", "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(self.rows[name])


def forge_corpus(config: ForgeConfig, out_dir: str | Path) -> GroundTruthManifest:
    """Generate the corpus under out_dir and return its manifest.

    Writes one CSV per registered table, a placeholder file for every
    asset-backed metadata row (content = its own relative path), and
    manifest.json.
    """
    config.validate()
    import random

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ForgeError(f"out_dir not writable: {out_dir} ({exc})") from exc

    rng = random.Random(config.seed)
    paths = DEFAULT_PATH_CONVENTION

    ds_headers = [h for h in config.note_header_lexicon if h in set(DS_HEADERS)] or DS_HEADERS
    rr_headers = [h for h in config.note_header_lexicon if h in set(RR_HEADERS)] or RR_HEADERS

    manifest = GroundTruthManifest(
        config_echo={
            "seed": config.seed,
            "n_subjects": config.n_subjects,
            "max_admissions_per_subject": config.max_admissions_per_subject,
            "event_rates": dict(config.event_rates),
            "missing_hadm_fraction": config.missing_hadm_fraction,
            "date_range": [_fmt(config.date_range[0]), _fmt(config.date_range[1])],
        }
    )

    writer = _CorpusWriter(out_dir)
    writer.table("patients", ["subject_id", "gender", "anchor_age"])
    writer.table("admissions",
                 ["subject_id", "hadm_id", "admittime", "dischtime", "hospital_expire_flag"])
    writer.table("diagnoses_icd",
                 ["subject_id", "hadm_id", "seq_num", "icd_code", "icd_version"])
    writer.table("d_icd_diagnoses", ["icd_code", "icd_version", "long_title"])
    writer.table("labevents", ["subject_id", "hadm_id", "itemid", "charttime", "valuenum"])
    writer.table("notes",
                 ["note_id", "subject_id", "hadm_id", "note_type", "charttime", "study_id", "text"])
    writer.table("cxr_metadata",
                 ["subject_id", "hadm_id", "study_id", "dicom_id", "study_datetime", "view_position"])
    writer.table("ecg_metadata",
                 ["subject_id", "hadm_id", "study_id", "ecg_time", "lead_count", "duration_s"])
    writer.table("echo_metadata", ["subject_id", "hadm_id", "study_id", "acquisition_time"])
    writer.table("waveform_metadata",
                 ["subject_id", "hadm_id", "study_id", "start_time", "duration_s"])
    writer.table("inputevents",
                 ["subject_id", "hadm_id", "itemid", "starttime", "endtime", "dose"])
    writer.table("procedureevents",
                 ["subject_id", "hadm_id", "itemid", "starttime", "endtime"])

    for code, version, title in config.icd_pool:
        writer.add("d_icd_diagnoses", [code, version, title])

    rates = {**DEFAULT_EVENT_RATES, **config.event_rates}
    hadm_seq = 0
    study_seq = 0
    dicom_seq = 0
    asset_paths: list[str] = []
    icd_members: dict[str, set[tuple[int, int]]] = {}

    range_start, range_end = config.date_range
    # Latest admission start that still fits the longest possible stay.
    latest_start = range_end - timedelta(hours=MAX_STAY_HOURS)

    for i in range(config.n_subjects):
        subject_id = 10_000_000 + i
        gender = rng.choice(["M", "F"])
        anchor_age = rng.randint(18, 91)
        writer.add("patients", [subject_id, gender, anchor_age])
        manifest.admissions[subject_id] = []

        n_adm = rng.randint(1, config.max_admissions_per_subject)
        cursor = _uniform_time(rng, range_start, latest_start - timedelta(days=120))
        per_subject_notes = 0

        for _ in range(n_adm):
            stay_hours = math.exp(
                rng.uniform(math.log(MIN_STAY_HOURS), math.log(MAX_STAY_HOURS))
            )
            admit = cursor
            disch = admit + timedelta(seconds=round(stay_hours * 3600))
            if disch > range_end:
                break
            hadm_seq += 1
            hadm_id = 20_000_000 + hadm_seq
            expire = 1 if rng.random() < 0.08 else 0
            writer.add("admissions",
                       [subject_id, hadm_id, _fmt(admit), _fmt(disch), expire])
            manifest.admissions[subject_id].append(
                {"hadm_id": hadm_id, "admittime": _fmt(admit), "dischtime": _fmt(disch)}
            )
            events: dict[str, list[dict]] = {
                k: [] for k in
                ("ds", "rr", "cxr", "ecg", "waveform", "echo", "lab", "med", "proc")
            }
            manifest.events[hadm_id] = events
            duration_days = (disch - admit).total_seconds() / 86400.0

            # Diagnoses: one ICD version per admission, 1-5 codes.
            version = rng.choice([9, 10])
            pool = [p for p in config.icd_pool if p[1] == version] or config.icd_pool
            n_dx = rng.randint(1, min(5, len(pool)))
            for seq_num, (code, ver, _title) in enumerate(rng.sample(pool, n_dx), start=1):
                writer.add("diagnoses_icd", [subject_id, hadm_id, seq_num, code, ver])
                icd_members.setdefault(f"{code}|{ver}", set()).add((subject_id, hadm_id))

            # Lab events.
            for _ in range(_poisson(rng, rates["lab"] * duration_days)):
                itemid = rng.choice(sorted(LAB_ITEMS))
                lo, hi = LAB_ITEMS[itemid]
                t = _uniform_time(rng, admit, disch)
                value = round(rng.uniform(lo, hi), 1)
                writer.add("labevents", [subject_id, hadm_id, itemid, _fmt(t), value])
                events["lab"].append({"itemid": itemid, "time": _fmt(t), "value": value})

            def emit_note(note_type: str, headers_pool: list[str], t: datetime,
                          study_id: int | None, body_range=(5, 60)) -> str:
                nonlocal per_subject_notes
                per_subject_notes += 1
                note_id = f"{subject_id}-{note_type}-{per_subject_notes}"
                k = rng.randint(2, min(5, len(headers_pool))) if note_type == "RR" \
                    else rng.randint(3, min(7, len(headers_pool)))
                picked = set(rng.sample(headers_pool, k))
                chosen = [h for h in headers_pool if h in picked]  # pool order
                bodies = [_words(rng, rng.randint(*body_range)) for _ in chosen]
                text = forge_note(chosen, bodies)
                writer.add("notes", [note_id, subject_id, hadm_id, note_type, _fmt(t),
                                     study_id if study_id is not None else "", text])
                # "Header: body" tokenizes to header words (colon attached) + body words
                token_count = sum(len(h.split()) + len(b.split())
                                  for h, b in zip(chosen, bodies))
                manifest.notes[note_id] = {
                    "sections": [[h.upper(), b] for h, b in zip(chosen, bodies)],
                    "token_count": token_count,
                    "note_type": note_type,
                }
                return note_id

            # One discharge summary per admission, charted at discharge.
            ds_id = emit_note("DS", ds_headers, disch, None, body_range=(10, 160))
            events["ds"].append({"note_id": ds_id, "time": _fmt(disch)})

            def maybe_missing_hadm() -> int | str:
                return "" if rng.random() < config.missing_hadm_fraction else hadm_id

            # Imaging studies: 1-3 images each, one paired RR note per study.
            for _ in range(_poisson(rng, rates["cxr"] * duration_days)):
                study_seq += 1
                study_id = 50_000_000 + study_seq
                t = _uniform_time(rng, admit, disch)
                row_hadm = maybe_missing_hadm()
                for _img in range(rng.randint(1, 3)):
                    dicom_seq += 1
                    dicom_id = f"dcm{dicom_seq:08d}"
                    view = rng.choice(["PA", "AP", "LATERAL"])
                    writer.add("cxr_metadata",
                               [subject_id, row_hadm, study_id, dicom_id, _fmt(t), view])
                    rel = paths.render("cxr", subject_id=subject_id,
                                       study_id=study_id, dicom_id=dicom_id)
                    asset_paths.append(rel)
                    events["cxr"].append({"study_id": study_id, "dicom_id": dicom_id,
                                          "time": _fmt(t), "view": view,
                                          "hadm_in_row": row_hadm != "", "path": rel})
                rr_id = emit_note("RR", rr_headers, t, study_id)
                events["rr"].append({"note_id": rr_id, "time": _fmt(t),
                                     "study_id": study_id})

            # Standalone radiology reports (no imaging study attached).
            for _ in range(_poisson(rng, rates["rr"] * duration_days)):
                t = _uniform_time(rng, admit, disch)
                rr_id = emit_note("RR", rr_headers, t, None)
                events["rr"].append({"note_id": rr_id, "time": _fmt(t), "study_id": None})

            for modality, table, time_col in [
                ("ecg", "ecg_metadata", "ecg_time"),
                ("waveform", "waveform_metadata", "start_time"),
                ("echo", "echo_metadata", "acquisition_time"),
            ]:
                for _ in range(_poisson(rng, rates[modality] * duration_days)):
                    study_seq += 1
                    study_id = 50_000_000 + study_seq
                    t = _uniform_time(rng, admit, disch)
                    rel = paths.render(modality, subject_id=subject_id, study_id=study_id)
                    asset_paths.append(rel)
                    if modality == "ecg":
                        row_hadm = maybe_missing_hadm()
                        writer.add(table, [subject_id, row_hadm, study_id, _fmt(t), 12, 10])
                        events["ecg"].append({"study_id": study_id, "time": _fmt(t),
                                              "hadm_in_row": row_hadm != "", "path": rel})
                    elif modality == "waveform":
                        dur = rng.randint(60, 3600)
                        writer.add(table, [subject_id, hadm_id, study_id, _fmt(t), dur])
                        events["waveform"].append({"study_id": study_id, "time": _fmt(t),
                                                   "hadm_in_row": True, "path": rel})
                    else:
                        writer.add(table, [subject_id, hadm_id, study_id, _fmt(t)])
                        events["echo"].append({"study_id": study_id, "time": _fmt(t),
                                               "hadm_in_row": True, "path": rel})

            # Medication doses over intervals (may be instantaneous).
            for _ in range(_poisson(rng, rates["med"] * duration_days)):
                itemid = rng.choice(MED_ITEMS)
                start = _uniform_time(rng, admit, disch)
                max_dur = min(6 * 3600, int((disch - start).total_seconds()))
                end = start + timedelta(seconds=rng.randint(0, max_dur))
                dose = round(rng.uniform(1.0, 100.0), 2)
                writer.add("inputevents",
                           [subject_id, hadm_id, itemid, _fmt(start), _fmt(end), dose])
                events["med"].append({"itemid": itemid, "start": _fmt(start),
                                      "end": _fmt(end), "dose": dose})

            # Procedures: half instantaneous, half intervals.
            for _ in range(_poisson(rng, rates["proc"] * duration_days)):
                itemid = rng.choice(PROC_ITEMS)
                start = _uniform_time(rng, admit, disch)
                if rng.random() < 0.5:
                    end_str = ""
                else:
                    max_dur = min(12 * 3600, int((disch - start).total_seconds()))
                    end_str = _fmt(start + timedelta(seconds=rng.randint(0, max_dur)))
                writer.add("procedureevents",
                           [subject_id, hadm_id, itemid, _fmt(start), end_str])
                events["proc"].append({"itemid": itemid, "start": _fmt(start),
                                       "end": end_str or None})

            cursor = disch + timedelta(days=rng.randint(1, 30),
                                       seconds=rng.randint(0, 86399))

    writer.flush()

    if config.write_asset_placeholders:
        for rel in asset_paths:
            target = out_dir / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(rel, encoding="utf-8")

    manifest.icd_members = {
        key: sorted(members) for key, members in sorted(icd_members.items())
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
