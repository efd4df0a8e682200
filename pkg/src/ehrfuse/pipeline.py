"""Batch orchestration: search, sectionize, resolve, align, embed, export.

run_pipeline drives every stage from one RunConfig and writes the full
artifact set plus report.json. Artifact bytes depend only on config and
corpus; report.json additionally carries wall-clock stage seconds, so
its artifact hashes are stable across reruns while the report file
itself is not byte-stable.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import pandas as pd

from . import figures
from .align import (AlignmentPlan, WideTable, collect_bin_counts,
                    compute_widths, impute, widen)
from .assets import ResolvedRecords, resolve_records, unanchored_frame
from .cohort import Cohort, CohortSpec, cohort_stats, search
from .embed import ChunkPlan, EmbedderBinding, attach_embeddings, study_level_export
from .ingest import DatasetSnapshot, load_snapshot, rejects_frame
from .sectionize import compile_lexicon, load_lexicon, sectionize_table

ARTIFACTS = ("integrated.csv", "sections.csv", "cohort.csv",
             "alignment_log.csv", "unanchored.csv", "rejects.csv",
             "report.json")

DEFAULT_MODALITIES = ("ds", "rr", "cxr", "ecg", "waveform", "echo")
_ASSET_MODALITIES = ("cxr", "ecg", "waveform", "echo")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    root: str
    out_dir: str
    version_tag: str = "mimic-iv-3.1"
    cohort: CohortSpec = field(default_factory=CohortSpec)
    note_type_filter: str = "both"
    modalities: tuple[str, ...] = DEFAULT_MODALITIES
    view_filter: tuple[str, ...] = ()
    plan: AlignmentPlan = field(default_factory=AlignmentPlan)
    embed: bool = False
    embed_bindings: dict = field(default_factory=dict)
    chunk_window: int = 512
    chunk_overlap: int = 64
    lexicon_path: str = ""
    write_figures: bool = True
    study_export: bool = False

    def validate(self) -> None:
        if not Path(self.root).is_dir():
            raise FileNotFoundError(f"dataset root {self.root!r} does not exist")
        self.cohort.validate()
        self.plan.validate()
        if self.note_type_filter not in ("DS", "RR", "both"):
            raise ValueError(
                f"note_type_filter must be DS, RR, or both, "
                f"got {self.note_type_filter!r}")
        unknown = set(self.modalities) - set(DEFAULT_MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities: {sorted(unknown)}")
        if self.lexicon_path and not Path(self.lexicon_path).is_file():
            raise FileNotFoundError(
                f"lexicon file {self.lexicon_path!r} does not exist")

    def to_json_dict(self) -> dict:
        return {
            "root": self.root,
            "out_dir": self.out_dir,
            "version_tag": self.version_tag,
            "cohort": self.cohort.to_json_dict(),
            "note_type_filter": self.note_type_filter,
            "modalities": sorted(self.modalities),
            "view_filter": sorted(self.view_filter),
            "plan": self.plan.to_json_dict(),
            "embed": self.embed,
            "embed_bindings": {
                m: {"kind": b.kind, "dim": b.dim,
                    "command": list(b.command), "endpoint": b.endpoint,
                    "timeout_s": b.timeout_s}
                for m, b in sorted(self.embed_bindings.items())
            },
            "chunk_window": self.chunk_window,
            "chunk_overlap": self.chunk_overlap,
            "lexicon_path": self.lexicon_path,
            "write_figures": self.write_figures,
            "study_export": self.study_export,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RunConfig":
        bindings = {}
        for m, b in data.get("embed_bindings", {}).items():
            bindings[m] = EmbedderBinding(
                kind=b.get("kind", "builtin_hash"),
                dim=int(b.get("dim", 768)),
                command=tuple(b.get("command", [])),
                endpoint=b.get("endpoint", ""),
                timeout_s=float(b.get("timeout_s", 30.0)),
            )
        return cls(
            root=data["root"],
            out_dir=data["out_dir"],
            version_tag=data.get("version_tag", "mimic-iv-3.1"),
            cohort=CohortSpec.from_json_dict(data.get("cohort", {})),
            note_type_filter=data.get("note_type_filter", "both"),
            modalities=tuple(data.get("modalities", DEFAULT_MODALITIES)),
            view_filter=tuple(data.get("view_filter", [])),
            plan=AlignmentPlan.from_json_dict(data.get("plan", {})),
            embed=bool(data.get("embed", False)),
            embed_bindings=bindings,
            chunk_window=int(data.get("chunk_window", 512)),
            chunk_overlap=int(data.get("chunk_overlap", 64)),
            lexicon_path=data.get("lexicon_path", ""),
            write_figures=bool(data.get("write_figures", True)),
            study_export=bool(data.get("study_export", False)),
        )


@dataclass
class RunReport:
    status: str
    out_dir: str
    rows: int = 0
    columns: int = 0
    member_count: int = 0
    section_count: int = 0
    anchored_records: int = 0
    unanchored_records: int = 0
    reject_count: int = 0
    dropped_rows: int = 0
    truncated_rows: int = 0
    embed_errors: int = 0
    stage_seconds: dict = field(default_factory=dict)
    artifact_hashes: dict = field(default_factory=dict)
    figures: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    error: str = ""

    def to_json_dict(self) -> dict:
        return {
            "status": self.status,
            "out_dir": self.out_dir,
            "rows": self.rows,
            "columns": self.columns,
            "member_count": self.member_count,
            "section_count": self.section_count,
            "anchored_records": self.anchored_records,
            "unanchored_records": self.unanchored_records,
            "reject_count": self.reject_count,
            "dropped_rows": self.dropped_rows,
            "truncated_rows": self.truncated_rows,
            "embed_errors": self.embed_errors,
            "stage_seconds": {k: round(v, 6) for k, v in self.stage_seconds.items()},
            "artifact_hashes": dict(sorted(self.artifact_hashes.items())),
            "figures": sorted(self.figures),
            "config": self.config,
            "error": self.error,
        }


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return "sha256:" + digest.hexdigest()


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    # RFC-4180: \r\n rows, minimal quoting, null as empty unquoted field
    frame.to_csv(path, index=False, lineterminator="\r\n", na_rep="")


class _Stages:
    def __init__(self):
        self.seconds: dict[str, float] = {}

    def run(self, name: str, fn):
        start = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            self.seconds[name] = time.perf_counter() - start
            raise PipelineError(name, exc) from exc
        self.seconds[name] = time.perf_counter() - start
        return result


def run_pipeline(config: RunConfig,
                 snapshot: DatasetSnapshot | None = None) -> RunReport:
    """Execute every stage and write the artifact set under config.out_dir.

    Any stage failure removes files written so far and re-raises as
    PipelineError naming the stage.
    """
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    stages = _Stages()

    def emit(name: str, frame: pd.DataFrame) -> Path:
        path = out_dir / name
        _write_csv(frame, path)
        written.append(path)
        return path

    try:
        if snapshot is None:
            snapshot = stages.run("load", lambda: load_snapshot(
                config.root, version_tag=config.version_tag))
        else:
            stages.seconds["load"] = 0.0

        cohort = stages.run("search", lambda: search(snapshot, config.cohort))
        emit("cohort.csv", cohort.to_frame())
        emit("rejects.csv", rejects_frame(snapshot))

        matcher = compile_lexicon(load_lexicon(config.lexicon_path)) \
            if config.lexicon_path else compile_lexicon()
        want_notes = bool({"ds", "rr"} & set(config.modalities))
        note_filter = config.note_type_filter
        if set(config.modalities) & {"ds", "rr"} == {"ds"}:
            note_filter = "DS"
        elif set(config.modalities) & {"ds", "rr"} == {"rr"}:
            note_filter = "RR"
        sections = stages.run("sectionize", lambda: sectionize_table(
            snapshot, cohort, note_type_filter=note_filter, matcher=matcher)
            if want_notes else pd.DataFrame(columns=[
                "subject_id", "hadm_id", "note_id", "section_id",
                "section_name", "section_text"]))
        emit("sections.csv", sections)

        asset_modalities = set(config.modalities) & set(_ASSET_MODALITIES)
        records = stages.run("resolve", lambda: resolve_records(
            snapshot, cohort, modalities=asset_modalities or None,
            view_filter=set(config.view_filter) or None)
            if asset_modalities else ResolvedRecords([], []))
        emit("unanchored.csv", unanchored_frame(records))

        def _align() -> tuple[AlignmentPlan, WideTable, dict]:
            plan = config.plan
            counts = collect_bin_counts(snapshot, cohort, records, sections,
                                        plan.granularity)
            if not plan.widths:
                widths, cutoffs = compute_widths(counts, plan.percentile_k)
                plan = replace(plan, widths=widths, cutoffs=cutoffs)
            table = widen(snapshot, cohort, records, sections, plan)
            if plan.imputation:
                table = impute(table)
            return plan, table, counts

        plan, table, counts = stages.run("align", _align)
        emit("alignment_log.csv", table.log)

        embed_errors: list[dict] = []
        if config.embed:
            def _embed():
                bindings = {m: config.embed_bindings.get(m, EmbedderBinding())
                            for m in config.modalities}
                result = attach_embeddings(
                    table, snapshot, config.root, bindings=bindings,
                    plan=ChunkPlan(config.chunk_window, config.chunk_overlap),
                    modalities=set(config.modalities))
                return result
            result = stages.run("embed", _embed)
            embed_errors = result.errors
        else:
            stages.seconds["embed"] = 0.0

        def _export() -> tuple[int, int]:
            emit("integrated.csv", table.frame)
            if config.embed and config.study_export:
                emit("study_embeddings.csv", study_level_export(table, snapshot))
            return len(table.frame), len(table.frame.columns)

        rows, cols = stages.run("export", _export)

        figure_paths: list[Path] = []
        if config.write_figures:
            def _figures():
                stats = cohort_stats(cohort, snapshot)
                return figures.render_all(counts, plan, table.frame, stats,
                                          out_dir / "figures")
            figure_paths = stages.run("figures", _figures)
            written.extend(figure_paths)

        log = table.log
        report = RunReport(
            status="done",
            out_dir=str(out_dir),
            rows=rows,
            columns=cols,
            member_count=len(cohort.members),
            section_count=len(sections),
            anchored_records=len(records.anchored),
            unanchored_records=len(records.unanchored),
            reject_count=len(snapshot.rejects),
            dropped_rows=int((log["action"] == "dropped").sum()) if len(log) else 0,
            truncated_rows=int((log["action"] == "truncated").sum()) if len(log) else 0,
            embed_errors=len(embed_errors),
            stage_seconds=stages.seconds,
            config=replace(config, plan=plan).to_json_dict(),
            figures=[p.name for p in figure_paths],
        )
        for path in written:
            if path.suffix == ".csv":
                report.artifact_hashes[path.name] = _sha256(path)
        for path in figure_paths:
            report.artifact_hashes["figures/" + path.name] = _sha256(path)
        report_path = out_dir / "report.json"
        report_path.write_text(
            json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")
        return report
    except PipelineError:
        for path in written:
            path.unlink(missing_ok=True)
        fig_dir = out_dir / "figures"
        if fig_dir.is_dir() and not any(fig_dir.iterdir()):
            fig_dir.rmdir()
        raise


def preview_cohort(snapshot: DatasetSnapshot, spec: CohortSpec) -> dict:
    """Member count, matched codes, per-modality coverage; read-only."""
    spec.validate()
    cohort = search(snapshot, spec)
    stats = cohort_stats(cohort, snapshot)
    matched = sorted({c for codes in cohort.matched_codes.values() for c in codes})
    return {
        "member_count": len(cohort.members),
        "subject_count": len(cohort.subject_ids),
        "matched_codes": matched,
        "coverage": {m: s["coverage"]
                     for m, s in stats["modalities"].items()},
    }


def preview_widths(snapshot: DatasetSnapshot, spec: CohortSpec,
                   granularity: str, percentile_k: float,
                   modalities: tuple[str, ...] = DEFAULT_MODALITIES,
                   view_filter: tuple[str, ...] = (),
                   note_type_filter: str = "both") -> dict:
    """Widths, dropped-row count, and slot sparsity without building the table."""
    spec.validate()
    plan = AlignmentPlan(granularity=granularity, percentile_k=percentile_k)
    plan.validate()
    cohort = search(snapshot, spec)
    matcher = compile_lexicon()
    want_notes = bool({"ds", "rr"} & set(modalities))
    sections = sectionize_table(snapshot, cohort, note_type_filter=note_type_filter,
                                matcher=matcher) if want_notes else pd.DataFrame(
        columns=["subject_id", "hadm_id", "note_id", "section_id",
                 "section_name", "section_text"])
    asset_modalities = set(modalities) & set(_ASSET_MODALITIES)
    records = resolve_records(snapshot, cohort, modalities=asset_modalities or None,
                              view_filter=set(view_filter) or None) \
        if asset_modalities else ResolvedRecords([], [])
    counts = collect_bin_counts(snapshot, cohort, records, sections, granularity)
    widths, cutoffs = compute_widths(counts, percentile_k)

    n_bins = len(next(iter(counts.values()), []))
    dropped = 0
    filled = 0
    survivors = 0
    for i in range(n_bins):
        over = any(counts[m][i] > cutoffs.get(m, 0) for m in counts)
        if over:
            dropped += 1
            continue
        survivors += 1
        filled += sum(min(counts[m][i], widths.get(m, 0)) for m in counts)
    total_width = sum(widths.values())
    capacity = survivors * total_width
    return {
        "widths": {m: w for m, w in sorted(widths.items()) if w > 0},
        "cutoffs": {m: c for m, c in sorted(cutoffs.items()) if c > 0},
        "bin_count": n_bins,
        "dropped_rows": dropped,
        "sparsity": round(1.0 - (filled / capacity), 6) if capacity else 0.0,
    }


def write_config_json(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(config.to_json_dict(), indent=2, sort_keys=True) + "\n")


def read_config_json(path: str | Path) -> RunConfig:
    return RunConfig.from_json_dict(json.loads(Path(path).read_text()))
