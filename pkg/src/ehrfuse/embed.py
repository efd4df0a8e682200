"""Embedding columns: chunking, mean pooling, and embedder bindings.

The built-in embedder is feature hashing with signed buckets: every
token maps through blake2b to a bucket index and a sign, the bucket
sums are L2-normalized per chunk, and chunk vectors are averaged
without re-normalizing. That keeps every number reproducible and
oracle-checkable with no model downloads. Real models plug in through
an external binding that speaks line-delimited JSON over a subprocess
pipe or an HTTP endpoint.
"""

from __future__ import annotations

import hashlib
import json
import math
import subprocess
import urllib.request
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd

from .align import SLOT_MODALITIES, WideTable

DEFAULT_DIM = 768
DEFAULT_WINDOW = 512
DEFAULT_OVERLAP = 64
DEFAULT_TIMEOUT_S = 30.0

# slot family → embed column family
MODALITY_KIND = {
    "ds": "text", "rr": "text",
    "ecg": "signal", "waveform": "signal",
    "cxr": "img", "echo": "img",
}


class EmbedError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkPlan:
    window: int = DEFAULT_WINDOW
    overlap: int = DEFAULT_OVERLAP

    def __post_init__(self):
        if self.window <= 0:
            raise EmbedError(f"window must be positive, got {self.window}")
        if not (0 <= self.overlap < self.window):
            raise EmbedError(
                f"overlap must be in [0, window), got {self.overlap}")

    @property
    def stride(self) -> int:
        return self.window - self.overlap


def tokenize_ws(text: str) -> list[str]:
    """Whitespace-run tokenizer; empty or blank text gives []."""
    return text.split()


def chunk(tokens: list[str], plan: ChunkPlan | None = None) -> list[list[str]]:
    """Windows at 0, stride, 2*stride, ...; the last window ends at the final token."""
    if plan is None:
        plan = ChunkPlan()
    n = len(tokens)
    if n == 0:
        return []
    if n <= plan.window:
        return [list(tokens)]
    chunks = []
    start = 0
    while True:
        end = min(start + plan.window, n)
        chunks.append(list(tokens[start:end]))
        if end >= n:
            break
        start += plan.stride
    return chunks


def chunk_spans(n_tokens: int, plan: ChunkPlan | None = None) -> list[tuple[int, int]]:
    """[start, end) index pairs matching chunk()."""
    if plan is None:
        plan = ChunkPlan()
    if n_tokens == 0:
        return []
    return [
        (i * plan.stride, min(i * plan.stride + plan.window, n_tokens))
        for i in range(_n_chunks(n_tokens, plan))
    ]


def _n_chunks(n: int, plan: ChunkPlan) -> int:
    if n <= plan.window:
        return 1
    return 1 + math.ceil((n - plan.window) / plan.stride)


@lru_cache(maxsize=65536)
def _token_bucket(token: str, dim: int) -> tuple[int, int]:
    """(bucket index, sign) from a fixed 64-bit hash of the token."""
    h = int.from_bytes(
        hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")
    return (h >> 1) % dim, 1 if h & 1 else -1


def hash_embed_chunk(tokens: list[str], dim: int = DEFAULT_DIM) -> np.ndarray:
    """Signed-bucket accumulation, then L2 normalization."""
    vec = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        idx, sign = _token_bucket(token, dim)
        vec[idx] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0:
        vec /= norm
    return vec


@dataclass(frozen=True)
class EmbedderBinding:
    kind: str = "builtin_hash"
    dim: int = DEFAULT_DIM
    command: tuple[str, ...] = ()
    endpoint: str = ""
    timeout_s: float = DEFAULT_TIMEOUT_S

    def validate(self) -> None:
        if self.kind not in ("builtin_hash", "external"):
            raise EmbedError(f"unknown embedder kind {self.kind!r}")
        if self.dim <= 0:
            raise EmbedError(f"dim must be positive, got {self.dim}")
        if self.kind == "external" and not (self.command or self.endpoint):
            raise EmbedError("external binding needs a command or endpoint")


def embed_chunks(chunks: list[list[str]], binding: EmbedderBinding | None = None,
                 ) -> np.ndarray:
    """Mean of per-chunk vectors; the mean is not re-normalized."""
    if binding is None:
        binding = EmbedderBinding()
    binding.validate()
    if not chunks:
        raise EmbedError("embed_chunks needs at least one chunk")
    if binding.kind != "builtin_hash":
        raise EmbedError("embed_chunks only drives the builtin embedder; "
                         "route external payloads through ExternalEmbedder")
    vectors = [hash_embed_chunk(c, binding.dim) for c in chunks]
    return np.mean(vectors, axis=0)


def embed_text(text: str, binding: EmbedderBinding | None = None,
               plan: ChunkPlan | None = None) -> np.ndarray:
    return embed_chunks(chunk(tokenize_ws(text), plan), binding)


def embed_file(path: Path, binding: EmbedderBinding | None = None,
               plan: ChunkPlan | None = None) -> np.ndarray:
    """Builtin scaffold for signal/img records: file bytes as the token stream."""
    text = path.read_text(errors="replace")
    tokens = tokenize_ws(text)
    if not tokens:
        tokens = [path.name]
    return embed_chunks(chunk(tokens, plan), binding)


class ExternalEmbedder:
    """Line-delimited JSON protocol over a subprocess or HTTP endpoint.

    Request:  {"id": str, "modality": str, "payload": str}
    Response: {"id": str, "values": [float, ...]}  (or {"id","error"})
    Responses may arrive in any order; assembly is keyed by id.
    """

    def __init__(self, binding: EmbedderBinding):
        binding.validate()
        if binding.kind != "external":
            raise EmbedError("ExternalEmbedder needs an external binding")
        self.binding = binding
        self._proc: subprocess.Popen | None = None

    def __enter__(self):
        if self.binding.command:
            self._proc = subprocess.Popen(
                list(self.binding.command), stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, text=True, bufsize=1)
        return self

    def __exit__(self, *exc):
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=self.binding.timeout_s)
            self._proc = None

    def embed_batch(self, requests: list[dict]) -> tuple[dict[str, np.ndarray], list[dict]]:
        """(vectors by id, error entries). Dim mismatch or failure → error entry."""
        if self._proc is not None:
            raw = self._subprocess_roundtrip(requests)
        else:
            raw = self._http_roundtrip(requests)
        vectors: dict[str, np.ndarray] = {}
        errors: list[dict] = []
        seen = set()
        for resp in raw:
            rid = str(resp.get("id", ""))
            seen.add(rid)
            if "error" in resp:
                errors.append({"id": rid, "reason": str(resp["error"])})
                continue
            values = resp.get("values", [])
            if len(values) != self.binding.dim:
                errors.append({
                    "id": rid,
                    "reason": f"dimension mismatch: got {len(values)}, "
                              f"expected {self.binding.dim}",
                })
                continue
            vec = np.asarray(values, dtype=np.float64)
            if not np.all(np.isfinite(vec)):
                errors.append({"id": rid, "reason": "non-finite values"})
                continue
            vectors[rid] = vec
        for req in requests:
            rid = str(req["id"])
            if rid not in seen:
                errors.append({"id": rid, "reason": "no response"})
        return vectors, errors

    def _subprocess_roundtrip(self, requests: list[dict]) -> list[dict]:
        assert self._proc is not None and self._proc.stdin and self._proc.stdout
        out = []
        for req in requests:
            self._proc.stdin.write(json.dumps(req) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
            if not line:
                out.append({"id": req["id"], "error": "embedder closed pipe"})
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                out.append({"id": req["id"], "error": "invalid JSON response"})
        return out

    def _http_roundtrip(self, requests: list[dict]) -> list[dict]:
        out = []
        for req in requests:
            body = json.dumps(req).encode("utf-8")
            http_req = urllib.request.Request(
                self.binding.endpoint, data=body,
                headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(
                        http_req, timeout=self.binding.timeout_s) as resp:
                    out.append(json.loads(resp.read().decode("utf-8")))
            except Exception as exc:  # timeout, refused, bad JSON
                out.append({"id": req["id"], "error": str(exc)})
        return out


def serialize_vector(vec: np.ndarray) -> str:
    """JSON array with a fixed float format so reruns are byte-identical."""
    return "[" + ", ".join(format(v, ".10g") for v in vec.tolist()) + "]"


@dataclass
class AttachResult:
    table: WideTable
    errors: list[dict] = field(default_factory=list)


def attach_embeddings(table: WideTable, snapshot, root: str | Path,
                      bindings: dict[str, EmbedderBinding] | None = None,
                      plan: ChunkPlan | None = None,
                      modalities: set[str] | None = None) -> AttachResult:
    """Add "{slot}_embed" next to every slot column of the chosen modalities.

    ds/rr slots hold note_ids and embed the note text; the other slots
    hold file paths and embed the file under root. Null slots and
    failed records give null cells plus an error entry.
    """
    root = Path(root)
    frame = table.frame.copy()
    if bindings is None:
        bindings = {}
    if modalities is None:
        modalities = set(MODALITY_KIND)
    errors: list[dict] = []
    notes = snapshot.table("notes").set_index("note_id") \
        if snapshot.has_table("notes") else None

    ext_requests: dict[str, list[dict]] = {}
    ext_sources: list[tuple[str, str, int, str]] = []  # (rid, col, row, payload)

    cache: dict[tuple[str, str], str | None] = {}

    def builtin_cell(kind: str, value: str, binding: EmbedderBinding) -> str | None:
        key = (kind, value)
        if key in cache:
            return cache[key]
        try:
            if kind == "text":
                if notes is None or value not in notes.index:
                    raise EmbedError(f"note {value!r} not in snapshot")
                vec = embed_text(str(notes.loc[value, "text"]), binding, plan)
            else:
                path = root / value
                if not path.exists():
                    raise EmbedError(f"missing asset file {value!r}")
                vec = embed_file(path, binding, plan)
            cell = serialize_vector(vec)
        except EmbedError as exc:
            errors.append({"column": kind, "source": value, "reason": str(exc)})
            cell = None
        cache[key] = cell
        return cell

    for modality in sorted(modalities & set(MODALITY_KIND)):
        kind = MODALITY_KIND[modality]
        binding = bindings.get(modality, EmbedderBinding())
        binding.validate()
        slot_cols = [c for c in frame.columns
                     if c.startswith(f"{modality}_") and c.removeprefix(
                         f"{modality}_").isdigit()]
        for col in slot_cols:
            embed_col = f"{col}_embed"
            cells: list = []
            for row_idx, value in enumerate(frame[col]):
                if pd.isna(value):
                    cells.append(pd.NA)
                    continue
                if binding.kind == "builtin_hash":
                    cell = builtin_cell(kind, str(value), binding)
                    cells.append(cell if cell is not None else pd.NA)
                else:
                    payload = str(value) if kind == "text" else str(root / str(value))
                    if kind == "text":
                        if notes is None or value not in notes.index:
                            errors.append({"column": col, "source": str(value),
                                           "reason": "note not in snapshot"})
                            cells.append(pd.NA)
                            continue
                        payload = str(notes.loc[value, "text"])
                    rid = f"{col}:{row_idx}"
                    ext_requests.setdefault(modality, []).append(
                        {"id": rid, "modality": kind, "payload": payload})
                    ext_sources.append((rid, embed_col, row_idx, str(value)))
                    cells.append(pd.NA)
            frame[embed_col] = pd.array(cells, dtype="string")

    for modality, requests in sorted(ext_requests.items()):
        binding = bindings[modality]
        with ExternalEmbedder(binding) as emb:
            vectors, ext_errors = emb.embed_batch(requests)
        errors.extend({"column": e["id"].split(":")[0] + "_embed",
                       "source": e["id"], "reason": e["reason"]}
                      for e in ext_errors)
        for rid, embed_col, row_idx, _src in ext_sources:
            if rid in vectors and embed_col.startswith(modality):
                frame.loc[row_idx, embed_col] = serialize_vector(vectors[rid])

    table.frame = frame
    return AttachResult(table=table, errors=errors)


def study_level_export(table: WideTable, snapshot) -> pd.DataFrame:
    """Imaging-study rows shaped (subject_id, study_id, note_id, text_embed, img_embed).

    One row per CXR study that has both a linked report note embedding
    and at least one image embedding in the wide table; the image
    vector is the mean of the study's per-file vectors.
    """
    frame = table.frame
    rr_slots = [c for c in frame.columns
                if c.startswith("rr_") and c.removeprefix("rr_").isdigit()]
    cxr_slots = [c for c in frame.columns
                 if c.startswith("cxr_") and c.removeprefix("cxr_").isdigit()]
    notes = snapshot.table("notes")
    note_study = {}
    for row in notes.itertuples(index=False):
        if hasattr(row, "study_id") and not pd.isna(row.study_id):
            note_study[str(row.note_id)] = int(row.study_id)
    cxr_meta = snapshot.table("cxr_metadata")
    path_study: dict[str, int] = {}
    for row in cxr_meta.itertuples(index=False):
        path_study[str(row.dicom_id)] = int(row.study_id)

    text_by_study: dict[int, tuple[int, str, str]] = {}
    img_by_study: dict[int, list[np.ndarray]] = {}
    for _, row in frame.iterrows():
        for col in rr_slots:
            note_id = row[col]
            embed = row.get(f"{col}_embed", pd.NA)
            if pd.isna(note_id) or pd.isna(embed):
                continue
            study = note_study.get(str(note_id))
            if study is not None:
                text_by_study[study] = (int(row["subject_id"]), str(note_id),
                                        str(embed))
        for col in cxr_slots:
            path = row[col]
            embed = row.get(f"{col}_embed", pd.NA)
            if pd.isna(path) or pd.isna(embed):
                continue
            dicom = Path(str(path)).stem
            study = path_study.get(dicom)
            if study is not None:
                img_by_study.setdefault(study, []).append(
                    np.asarray(json.loads(str(embed))))

    rows = []
    for study in sorted(set(text_by_study) & set(img_by_study)):
        subject_id, note_id, text_embed = text_by_study[study]
        img_vec = np.mean(img_by_study[study], axis=0)
        rows.append((subject_id, study, note_id, text_embed,
                     serialize_vector(img_vec)))
    return pd.DataFrame(rows, columns=[
        "subject_id", "study_id", "note_id", "text_embed", "img_embed"])
