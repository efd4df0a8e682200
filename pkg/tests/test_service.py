"""HTTP API behavior via the in-process test client."""

from __future__ import annotations

import time

import pytest
from fastapi.testclient import TestClient

from ehrfuse.cohort import MODE_ALL, CohortSpec
from ehrfuse.pipeline import preview_cohort, preview_widths
from ehrfuse.service import create_app

ALL_BODY = {"mode": "all_subjects"}


@pytest.fixture()
def client(tmp_path):
    app = create_app(workspace=tmp_path / "runs")
    with TestClient(app) as c:
        yield c


@pytest.fixture()
def loaded(client, tiny_corpus):
    root, _ = tiny_corpus
    resp = client.post("/snapshot/load", json={"root": str(root)})
    assert resp.status_code == 200
    return client, resp.json()


def _poll_done(client, run_id: str, timeout_s: float = 60.0) -> dict:
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        body = client.get(f"/run/{run_id}/report").json()
        if body["status"] in ("done", "error"):
            return body
        time.sleep(0.05)
    raise AssertionError(f"run {run_id} did not settle within {timeout_s}s")


def test_preview_before_load_is_400(client):
    resp = client.post("/cohort/preview", json=ALL_BODY)
    assert resp.status_code == 400
    assert "no snapshot loaded" in resp.json()["detail"]


def test_load_reports_table_sizes(loaded, tiny_snapshot):
    _, body = loaded
    assert body["subjects"] == len(tiny_snapshot.subject_ids)
    assert body["rejects"] == 0
    assert body["tables"]["admissions"] == len(tiny_snapshot.table("admissions"))
    assert body["tables"]["notes"] == len(tiny_snapshot.table("notes"))


def test_load_bad_root_is_400(client, tmp_path):
    resp = client.post("/snapshot/load", json={"root": str(tmp_path / "missing")})
    assert resp.status_code == 400


def test_cohort_preview_matches_library(loaded, tiny_snapshot):
    client, _ = loaded
    resp = client.post("/cohort/preview", json=ALL_BODY)
    assert resp.status_code == 200
    want = preview_cohort(tiny_snapshot, CohortSpec(mode=MODE_ALL))
    assert resp.json() == want


def test_cohort_preview_invalid_spec_is_400(loaded):
    client, _ = loaded
    resp = client.post("/cohort/preview",
                       json={"mode": "icd", "code_patterns": []})
    assert resp.status_code == 400
    assert "code pattern" in resp.json()["detail"]


def test_align_preview_matches_library(loaded, tiny_snapshot):
    client, _ = loaded
    resp = client.post("/align/preview", json={
        "cohort": ALL_BODY, "granularity": "day", "percentile_k": 90.0})
    assert resp.status_code == 200
    want = preview_widths(tiny_snapshot, CohortSpec(mode=MODE_ALL), "day", 90.0)
    assert resp.json() == want


def test_align_preview_validates_inputs(loaded):
    client, _ = loaded
    resp = client.post("/align/preview", json={
        "cohort": ALL_BODY, "granularity": "week"})
    assert resp.status_code == 400
    resp = client.post("/align/preview", json={
        "cohort": ALL_BODY, "percentile_k": 0})
    assert resp.status_code == 400


def test_repeat_previews_identical(loaded):
    client, _ = loaded
    payload = {"cohort": ALL_BODY, "granularity": "day", "percentile_k": 75.0}
    first = client.post("/align/preview", json=payload).json()
    second = client.post("/align/preview", json=payload).json()
    assert first == second


def test_run_to_done_and_artifact_download(loaded, tmp_path):
    client, _ = loaded
    resp = client.post("/run", json={"cohort": ALL_BODY, "granularity": "day"})
    assert resp.status_code == 200
    run_id = resp.json()["run_id"]
    assert resp.json()["status"] in ("queued", "running")

    body = _poll_done(client, run_id)
    assert body["status"] == "done", body
    report = body["report"]
    assert report["rows"] > 0
    assert "integrated.csv" in report["artifact_hashes"]

    art = client.get(f"/run/{run_id}/artifact/integrated.csv")
    assert art.status_code == 200
    assert art.headers["content-type"].startswith("text/csv")
    on_disk = (tmp_path / "runs" / run_id / "integrated.csv").read_bytes()
    assert art.content == on_disk

    png = client.get(f"/run/{run_id}/artifact/figures/coverage.png")
    assert png.status_code == 200
    assert png.headers["content-type"] == "image/png"
    assert png.content[:8] == b"\x89PNG\r\n\x1a\n"


def test_run_with_invalid_spec_is_400(loaded):
    client, _ = loaded
    resp = client.post("/run", json={
        "cohort": {"mode": "icd", "code_patterns": ["41*4"]}})
    assert resp.status_code == 400
    assert "final character" in resp.json()["detail"]


def test_unknown_run_is_404(loaded):
    client, _ = loaded
    assert client.get("/run/deadbeef/report").status_code == 404
    assert client.get("/run/deadbeef/artifact/integrated.csv").status_code == 404


def test_artifact_before_done_is_409(loaded, monkeypatch):
    client, _ = loaded
    # freeze the worker so the run stays queued/running while we probe
    import ehrfuse.service as service_module
    started = []

    class _StallThread:
        def __init__(self, target=None, daemon=None):
            started.append(target)

        def start(self):
            pass

    monkeypatch.setattr(service_module.threading, "Thread", _StallThread)
    run_id = client.post("/run", json={"cohort": ALL_BODY}).json()["run_id"]
    resp = client.get(f"/run/{run_id}/artifact/integrated.csv")
    assert resp.status_code == 409
    assert len(started) == 1


def test_artifact_traversal_denied(loaded):
    client, _ = loaded
    run_id = client.post("/run", json={"cohort": ALL_BODY}).json()["run_id"]
    _poll_done(client, run_id)
    resp = client.get(f"/run/{run_id}/artifact/../../etc/passwd")
    assert resp.status_code in (400, 404)
    assert "passwd" not in resp.text


def test_run_error_reports_stage(client, make_corpus):
    # a corpus whose only admission rejects leaves zero members: the run
    # still finishes (empty table) rather than erroring
    root = make_corpus({
        "patients": [[1, "F", 50]],
        "admissions": [],
    })
    resp = client.post("/snapshot/load", json={"root": str(root)})
    assert resp.status_code == 200
    run_id = client.post("/run", json={"cohort": ALL_BODY}).json()["run_id"]
    body = _poll_done(client, run_id)
    assert body["status"] == "done"
    assert body["report"]["rows"] == 0
    assert body["report"]["member_count"] == 0


def test_cross_origin_requests_get_cors_headers(client):
    resp = client.options("/cohort/preview", headers={
        "Origin": "http://localhost:5173",
        "Access-Control-Request-Method": "POST",
    })
    assert resp.status_code == 200
    assert resp.headers["access-control-allow-origin"] == "*"
