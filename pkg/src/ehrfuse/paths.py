"""Asset path conventions: metadata row -> deterministic relative path.

Templates mimic the PhysioNet directory layout; a corpus may override
them with a paths.json file at its root.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_TEMPLATES = {
    "cxr": "files/p{subject_prefix}/p{subject_id}/s{study_id}/{dicom_id}.jpg",
    "ecg": "ecg/p{subject_prefix}/p{subject_id}/s{study_id}/{study_id}.dat",
    "waveform": "waves/p{subject_prefix}/p{subject_id}/s{study_id}/{study_id}.dat",
    "echo": "echo/p{subject_prefix}/p{subject_id}/s{study_id}/{study_id}.dcm",
}


@dataclass(frozen=True)
class PathConvention:
    templates: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))

    def render(self, modality: str, subject_id: int,
               study_id: int | None = None, dicom_id: str | None = None) -> str:
        if modality not in self.templates:
            raise KeyError(f"no path template for modality: {modality}")
        return self.templates[modality].format(
            subject_prefix=str(subject_id)[:2],
            subject_id=subject_id,
            study_id=study_id,
            dicom_id=dicom_id,
        )


DEFAULT_PATH_CONVENTION = PathConvention()


def load_path_convention(root: str | Path) -> PathConvention:
    """paths.json under the corpus root overrides the default templates."""
    candidate = Path(root) / "paths.json"
    if candidate.exists():
        with open(candidate, encoding="utf-8") as fh:
            overrides = json.load(fh)
        merged = dict(DEFAULT_TEMPLATES)
        merged.update(overrides)
        return PathConvention(merged)
    return DEFAULT_PATH_CONVENTION
