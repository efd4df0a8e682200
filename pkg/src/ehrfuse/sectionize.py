"""Rule-based note sectionizing.

A header is recognized when a lexicon surface pattern sits at the start
of a line (indentation allowed) and is followed by a colon. Everything
from there to the next header belongs to that section; text before the
first header becomes a PREAMBLE pseudo-section. Character spans of the
emitted sections partition the note exactly, so the original text is
always reconstructible.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from .cohort import Cohort
from .ingest import DatasetSnapshot

PREAMBLE = "PREAMBLE"

DEFAULT_ENTRIES = [
    ("CHIEF COMPLAINT", ["Chief Complaint"]),
    ("HISTORY OF PRESENT ILLNESS", ["History of Present Illness"]),
    ("PAST MEDICAL HISTORY", ["Past Medical History"]),
    ("SOCIAL HISTORY", ["Social History"]),
    ("FAMILY HISTORY", ["Family History"]),
    ("MEDICATIONS ON ADMISSION", ["Medications on Admission"]),
    ("PHYSICAL EXAM", ["Physical Exam"]),
    ("DISCHARGE DIAGNOSIS", ["Discharge Diagnosis"]),
    ("INDICATION", ["Indication"]),
    ("COMPARISON", ["Comparison"]),
    ("TECHNIQUE", ["Technique"]),
    ("FINDINGS", ["Findings"]),
    ("IMPRESSION", ["Impression"]),
]


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class HeaderLexicon:
    entries: tuple[tuple[str, tuple[str, ...]], ...] = tuple(
        (name, tuple(patterns)) for name, patterns in DEFAULT_ENTRIES
    )
    case_sensitive: bool = False

    @classmethod
    def from_json_dict(cls, data: dict) -> "HeaderLexicon":
        return cls(
            entries=tuple(
                (e["name"], tuple(e["patterns"])) for e in data["entries"]
            ),
            case_sensitive=bool(data.get("case_sensitive", False)),
        )

    def to_json_dict(self) -> dict:
        return {
            "case_sensitive": self.case_sensitive,
            "entries": [
                {"name": name, "patterns": list(patterns)}
                for name, patterns in self.entries
            ],
        }


DEFAULT_LEXICON = HeaderLexicon()


def load_lexicon(path: str | Path) -> HeaderLexicon:
    with open(path, encoding="utf-8") as fh:
        return HeaderLexicon.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class NoteSection:
    section_name: str
    section_text: str
    ordinal: int                      # 1-based within the note
    char_span: tuple[int, int]        # raw offsets incl. the header line
    note_id: str | None = None
    subject_id: int | None = None
    hadm_id: int | None = None

    @property
    def section_id(self) -> str:
        prefix = f"{self.note_id}-" if self.note_id is not None else ""
        return f"{prefix}S{self.ordinal}"


class CompiledLexicon:
    """One alternation regex over all surface patterns, longest first."""

    def __init__(self, lexicon: HeaderLexicon):
        names = [name for name, _ in lexicon.entries]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise LexiconError(f"duplicate canonical names: {dupes}")
        surface_to_name: dict[str, str] = {}
        for name, patterns in lexicon.entries:
            if not patterns:
                raise LexiconError(f"entry {name!r} has no surface patterns")
            for p in patterns:
                if not p.strip():
                    raise LexiconError(f"entry {name!r} has an empty pattern")
                key = p if lexicon.case_sensitive else p.lower()
                if surface_to_name.get(key, name) != name:
                    raise LexiconError(
                        f"pattern {p!r} maps to both {surface_to_name[key]!r} and {name!r}")
                surface_to_name[key] = name
        self.lexicon = lexicon
        self._surface_to_name = surface_to_name
        ordered = sorted(surface_to_name, key=len, reverse=True)
        alternation = "|".join(re.escape(p) for p in ordered)
        flags = re.MULTILINE if lexicon.case_sensitive else re.MULTILINE | re.IGNORECASE
        self._regex = re.compile(rf"^[ \t]*({alternation})[ \t]*:", flags)

    def canonical_name(self, surface: str) -> str:
        key = surface if self.lexicon.case_sensitive else surface.lower()
        return self._surface_to_name[key]

    def finditer(self, text: str):
        return self._regex.finditer(text)


def compile_lexicon(lexicon: HeaderLexicon = DEFAULT_LEXICON) -> CompiledLexicon:
    return CompiledLexicon(lexicon)


def sectionize(note_text: str, matcher: CompiledLexicon,
               note_id: str | None = None, subject_id: int | None = None,
               hadm_id: int | None = None) -> list[NoteSection]:
    """Split one note into ordered sections; total over any input."""
    matches = list(matcher.finditer(note_text))
    sections: list[NoteSection] = []
    ordinal = 1

    first_start = matches[0].start() if matches else len(note_text)
    if first_start > 0:
        sections.append(NoteSection(
            PREAMBLE, note_text[:first_start].strip(), ordinal,
            (0, first_start), note_id, subject_id, hadm_id))
        ordinal += 1

    for i, m in enumerate(matches):
        span_end = matches[i + 1].start() if i + 1 < len(matches) else len(note_text)
        body = note_text[m.end():span_end].strip()
        sections.append(NoteSection(
            matcher.canonical_name(m.group(1)), body, ordinal,
            (m.start(), span_end), note_id, subject_id, hadm_id))
        ordinal += 1
    return sections


def sectionize_table(snapshot: DatasetSnapshot, cohort: Cohort,
                     note_type_filter: str = "both",
                     matcher: CompiledLexicon | None = None) -> pd.DataFrame:
    """One row per section over the cohort's notes of the chosen type.

    Notes carrying a hadm_id must match a member admission; notes
    without one fall back to subject-level membership.
    """
    if note_type_filter not in ("DS", "RR", "both"):
        raise ValueError(f"note_type_filter must be DS, RR or both: {note_type_filter!r}")
    if matcher is None:
        matcher = compile_lexicon()

    notes = snapshot.table("notes")
    if note_type_filter != "both":
        notes = notes[notes["note_type"] == note_type_filter]

    members = set(cohort.members)
    subjects = cohort.subject_ids
    rows = []
    for row in notes.itertuples(index=False):
        subject_id = int(row.subject_id)
        hadm = None if pd.isna(row.hadm_id) else int(row.hadm_id)
        if hadm is not None:
            if (subject_id, hadm) not in members:
                continue
        elif subject_id not in subjects:
            continue
        for sec in sectionize(row.text, matcher, note_id=row.note_id,
                              subject_id=subject_id, hadm_id=hadm):
            rows.append((subject_id, hadm, row.note_id, sec.section_id,
                         sec.section_name, sec.section_text))

    df = pd.DataFrame(rows, columns=[
        "subject_id", "hadm_id", "note_id", "section_id", "section_name", "section_text",
    ])
    if len(df):
        df = df.sort_values(["subject_id", "note_id", "section_id"],
                            key=lambda c: c.map(_sid_sort) if c.name == "section_id" else c,
                            kind="stable").reset_index(drop=True)
    return df


def _sid_sort(section_id: str):
    # "...-S12" sorts numerically by ordinal.
    return int(section_id.rsplit("S", 1)[1])
