"""Multimodal EHR integration over MIMIC-IV-schema CSV tables.

Cohort selection by ICD code or disease name, note sectionizing,
temporal alignment into a fixed-column wide table, modality file
linkage, optional embedding columns, and a CLI plus HTTP service.
"""

from .align import (AlignmentPlan, TemporalBin, WideTable, assign_bin,
                    build_bins, compute_widths, impute, widen)
from .assets import ModalityRecord, ResolvedRecords, resolve_records, verify_paths
from .cohort import Cohort, CohortSpec, cohort_stats, search
from .embed import (ChunkPlan, EmbedderBinding, attach_embeddings, chunk,
                    embed_chunks, embed_text, tokenize_ws)
from .forge import ForgeConfig, GroundTruthManifest, forge_corpus, load_manifest
from .ingest import DatasetSnapshot, admission_for, load_snapshot
from .paths import PathConvention, load_path_convention
from .pipeline import RunConfig, RunReport, preview_cohort, preview_widths, run_pipeline
from .sectionize import HeaderLexicon, NoteSection, compile_lexicon, sectionize

__version__ = "0.1.0"

__all__ = [
    "AlignmentPlan", "TemporalBin", "WideTable", "assign_bin", "build_bins",
    "compute_widths", "impute", "widen",
    "ModalityRecord", "ResolvedRecords", "resolve_records", "verify_paths",
    "Cohort", "CohortSpec", "cohort_stats", "search",
    "ChunkPlan", "EmbedderBinding", "attach_embeddings", "chunk",
    "embed_chunks", "embed_text", "tokenize_ws",
    "ForgeConfig", "GroundTruthManifest", "forge_corpus", "load_manifest",
    "DatasetSnapshot", "admission_for", "load_snapshot",
    "PathConvention", "load_path_convention",
    "RunConfig", "RunReport", "preview_cohort", "preview_widths", "run_pipeline",
    "HeaderLexicon", "NoteSection", "compile_lexicon", "sectionize",
    "__version__",
]
