"""HTTP service: snapshot loading, synchronous previews, asynchronous runs.

One immutable snapshot is shared by every request. Previews answer
inline; POST /run hands back a run id and executes on a worker thread,
with GET /run/{id}/report polling the state machine
queued -> running -> done | error.
"""

from __future__ import annotations

import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field

from .align import GRANULARITIES
from .cohort import CohortSpec, CohortSpecError
from .ingest import DatasetSnapshot, IngestError, load_snapshot
from .pipeline import (DEFAULT_MODALITIES, PipelineError, RunConfig,
                       preview_cohort, preview_widths, run_pipeline)


class LoadRequest(BaseModel):
    root: str
    version_tag: str = "mimic-iv-3.1"
    max_reject_fraction: float = 0.05


class CohortBody(BaseModel):
    mode: str = "icd"
    icd_version: str = "both"
    code_patterns: list[str] = Field(default_factory=list)
    disease_name_substrings: list[str] = Field(default_factory=list)
    match_on: str = "code"

    def to_spec(self) -> CohortSpec:
        spec = CohortSpec(
            mode=self.mode,
            icd_version=self.icd_version,
            code_patterns=tuple(self.code_patterns),
            disease_name_substrings=tuple(self.disease_name_substrings),
            match_on=self.match_on,
        )
        spec.validate()
        return spec


class AlignPreviewRequest(BaseModel):
    cohort: CohortBody
    granularity: str = "day"
    percentile_k: float = 100.0
    modalities: list[str] = Field(default_factory=lambda: list(DEFAULT_MODALITIES))
    view_filter: list[str] = Field(default_factory=list)
    note_type_filter: str = "both"


class RunRequest(BaseModel):
    cohort: CohortBody
    granularity: str = "day"
    percentile_k: float = 100.0
    drop_over_threshold: bool = True
    imputation: dict[str, str] = Field(default_factory=dict)
    modalities: list[str] = Field(default_factory=lambda: list(DEFAULT_MODALITIES))
    view_filter: list[str] = Field(default_factory=list)
    note_type_filter: str = "both"
    embed: bool = False
    study_export: bool = False
    write_figures: bool = True


class _RunState:
    def __init__(self, run_id: str, out_dir: Path):
        self.run_id = run_id
        self.out_dir = out_dir
        self.status = "queued"
        self.report: dict | None = None
        self.error = ""
        self.stage = ""


def create_app(workspace: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="ehrfuse", version="0.1.0")
    # the browser wizard may be served from another origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    state: dict = {
        "snapshot": None,
        "runs": {},
        "lock": threading.Lock(),
        "workspace": Path(workspace) if workspace else Path("runs"),
    }
    app.state.ehrfuse = state

    def snapshot_or_400() -> DatasetSnapshot:
        snap = state["snapshot"]
        if snap is None:
            raise HTTPException(400, detail="no snapshot loaded; POST /snapshot/load first")
        return snap

    @app.post("/snapshot/load")
    def snapshot_load(req: LoadRequest):
        try:
            snap = load_snapshot(req.root, version_tag=req.version_tag,
                                 max_reject_fraction=req.max_reject_fraction)
        except (IngestError, FileNotFoundError) as exc:
            raise HTTPException(400, detail=str(exc))
        state["snapshot"] = snap
        return {
            "version_tag": snap.version_tag,
            "tables": {name: len(df) for name, df in sorted(snap.tables.items())},
            "subjects": len(snap.subject_ids),
            "rejects": len(snap.rejects),
        }

    @app.post("/cohort/preview")
    def cohort_preview(body: CohortBody):
        snap = snapshot_or_400()
        try:
            return preview_cohort(snap, body.to_spec())
        except CohortSpecError as exc:
            raise HTTPException(400, detail=str(exc))

    @app.post("/align/preview")
    def align_preview(req: AlignPreviewRequest):
        snap = snapshot_or_400()
        if req.granularity not in GRANULARITIES:
            raise HTTPException(
                400, detail=f"granularity must be one of {GRANULARITIES}")
        if not (0 < req.percentile_k <= 100):
            raise HTTPException(400, detail="percentile_k must be in (0, 100]")
        try:
            return preview_widths(
                snap, req.cohort.to_spec(), req.granularity, req.percentile_k,
                modalities=tuple(req.modalities),
                view_filter=tuple(req.view_filter),
                note_type_filter=req.note_type_filter)
        except (CohortSpecError, ValueError) as exc:
            raise HTTPException(400, detail=str(exc))

    @app.post("/run")
    def run_start(req: RunRequest):
        snap = snapshot_or_400()
        run_id = uuid.uuid4().hex[:12]
        out_dir = state["workspace"] / run_id
        try:
            from .align import AlignmentPlan
            config = RunConfig(
                root=str(snap.root),
                out_dir=str(out_dir),
                version_tag=snap.version_tag,
                cohort=req.cohort.to_spec(),
                note_type_filter=req.note_type_filter,
                modalities=tuple(req.modalities),
                view_filter=tuple(req.view_filter),
                plan=AlignmentPlan(
                    granularity=req.granularity,
                    percentile_k=req.percentile_k,
                    imputation=dict(req.imputation),
                    drop_over_threshold=req.drop_over_threshold),
                embed=req.embed,
                study_export=req.study_export,
                write_figures=req.write_figures,
            )
            config.validate()
        except (CohortSpecError, ValueError, FileNotFoundError) as exc:
            raise HTTPException(400, detail=str(exc))
        run = _RunState(run_id, out_dir)
        with state["lock"]:
            state["runs"][run_id] = run

        def work():
            run.status = "running"
            try:
                report = run_pipeline(config, snapshot=snap)
                run.report = report.to_json_dict()
                run.status = "done"
            except PipelineError as exc:
                run.status = "error"
                run.stage = exc.stage
                run.error = str(exc)
            except Exception as exc:
                run.status = "error"
                run.error = str(exc)

        threading.Thread(target=work, daemon=True).start()
        return {"run_id": run_id, "status": run.status}

    @app.get("/run/{run_id}/report")
    def run_report(run_id: str):
        run = state["runs"].get(run_id)
        if run is None:
            raise HTTPException(404, detail=f"unknown run id {run_id!r}")
        body = {"run_id": run_id, "status": run.status}
        if run.status == "done":
            body["report"] = run.report
        elif run.status == "error":
            body["stage"] = run.stage
            body["error"] = run.error
        return body

    @app.get("/run/{run_id}/artifact/{name:path}")
    def run_artifact(run_id: str, name: str):
        run = state["runs"].get(run_id)
        if run is None:
            raise HTTPException(404, detail=f"unknown run id {run_id!r}")
        if run.status != "done":
            raise HTTPException(409, detail=f"run {run_id} is {run.status}")
        target = (run.out_dir / name).resolve()
        if run.out_dir.resolve() not in target.parents:
            raise HTTPException(400, detail="artifact name escapes run directory")
        if not target.is_file():
            raise HTTPException(404, detail=f"no artifact {name!r}")
        media = "application/json" if target.suffix == ".json" else \
            "image/png" if target.suffix == ".png" else "text/csv"
        return FileResponse(target, media_type=media, filename=target.name)

    return app


app = create_app()
