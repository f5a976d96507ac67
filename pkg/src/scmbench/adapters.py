"""Explained models, concept predictors and embedders behind one small interface each.

Every family has a file-backed variant (lookup by sha256 of the text), a
remote variant (JSON POST, one request per batch) and a built-in variant that
reads the deterministic renderer's markers, which makes closed-loop checks
possible without any trained model.

Remote wire format::

    POST /predict           {"texts": [...]}  ->  {"probs": [[...], ...]}
    POST /predict_concepts  {"texts": [...]}  ->  {"concepts": [{name: [...]}, ...]}
    POST /embed             {"texts": [...]}  ->  {"vectors": [[...], ...]}
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx
import numpy as np

from .errors import MalformedResponse, UnknownText
from .pipeline import read_jsonl
from .render import atomic_write, parse_markers, post_json, sha256_hex
from .scm import ScmGraph

log = logging.getLogger(__name__)

SUM_TOL = 1e-6
RENORM_TOL = 1e-3


def text_digest(text: str) -> str:
    return sha256_hex(text)


def as_simplex(probs, n: int | None = None, what: str = "probability vector") -> np.ndarray:
    """Validate a probability vector; renormalise small drift with a warning."""
    try:
        p = np.asarray(probs, dtype=np.float64)
    except (TypeError, ValueError):
        raise MalformedResponse(f"{what}: not numeric") from None
    if p.ndim != 1 or (n is not None and len(p) != n):
        raise MalformedResponse(f"{what}: expected length {n}, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise MalformedResponse(f"{what}: entries must be finite and non-negative")
    s = p.sum()
    if abs(s - 1.0) <= SUM_TOL:
        return p
    if abs(s - 1.0) <= RENORM_TOL:
        log.warning("%s sums to %.6f; renormalising", what, s)
        return p / s
    raise MalformedResponse(f"{what}: sums to {s:.6f}")


def softmax(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max())
    return e / e.sum()


@dataclass(frozen=True)
class PredictionVector:
    probs: tuple[float, ...]
    model_id: str

    @property
    def array(self) -> np.ndarray:
        return np.array(self.probs)


def one_hot(k: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[k] = 1.0
    return v


class _Memo:
    """Thread-safe text-digest cache shared by the adapters."""

    def __init__(self):
        self._lock = threading.Lock()
        self._data: dict[str, object] = {}

    def get(self, key):
        with self._lock:
            return self._data.get(key)

    def put(self, key, value):
        with self._lock:
            self._data[key] = value


# --- explained models


class OracleModel:
    """Analytic explained model over marker-rendered text.

    Scores ``s_y = kappa * 1{y = Y} + sum_C w_C * code(C) * 1{y = t_C}`` and
    returns ``softmax(s)``. ``weights`` maps concept -> (w_C, t_C).
    """

    def __init__(self, graph: ScmGraph, kappa: float = 2.0, weights: Mapping[str, tuple[float, int]] | None = None):
        self.graph = graph
        self.kappa = float(kappa)
        self.weights = dict(weights or {})
        self.n_classes = graph.concept(graph.outcome).n_values
        for c in self.weights:
            graph.concept(c)

    @property
    def model_id(self) -> str:
        w = ",".join(f"{c}:{v[0]}@{v[1]}" for c, v in sorted(self.weights.items()))
        return f"oracle(kappa={self.kappa}{';' + w if w else ''})"

    def scores(self, values: Mapping[str, int]) -> np.ndarray:
        s = np.zeros(self.n_classes)
        s[values[self.graph.outcome]] += self.kappa
        for c, (w, target) in self.weights.items():
            s[target] += w * values[c]
        return s

    def probs_for(self, values: Mapping[str, int]) -> np.ndarray:
        return softmax(self.scores(values))

    def analytic_icace(self, factual: Mapping[str, int], counterfactual: Mapping[str, int]) -> np.ndarray:
        return self.probs_for(counterfactual) - self.probs_for(factual)

    def predict(self, text: str) -> PredictionVector:
        return PredictionVector(tuple(self.probs_for(parse_markers(self.graph, text)).tolist()), self.model_id)

    def predict_many(self, texts: Sequence[str]) -> list[PredictionVector]:
        return [self.predict(t) for t in texts]


def _read_store(path: Path) -> dict[str, dict]:
    return {row["text_digest"]: row for row in read_jsonl(path)}


class FileBackedModel:
    """Predictions looked up from ``predictions.jsonl`` rows ``{text_digest, probs}``.

    Rows may carry ``label`` instead of ``probs`` (hard-label models); those
    map to one-hot vectors.
    """

    def __init__(self, path: str | Path, n_classes: int, model_id: str | None = None):
        self.path = Path(path)
        self.n_classes = n_classes
        self.model_id = model_id or f"file:{self.path.name}"
        self._rows = _read_store(self.path)

    def predict(self, text: str) -> PredictionVector:
        row = self._rows.get(text_digest(text))
        if row is None:
            raise UnknownText(f"{self.path}: no prediction for text {text_digest(text)[:12]}")
        if "probs" in row:
            p = as_simplex(row["probs"], self.n_classes, f"{self.model_id} prediction")
        else:
            p = one_hot(int(row["label"]), self.n_classes)
        return PredictionVector(tuple(p.tolist()), self.model_id)

    def predict_many(self, texts: Sequence[str]) -> list[PredictionVector]:
        return [self.predict(t) for t in texts]


class _Remote:
    def __init__(
        self,
        base_url: str,
        api_key_env: str = "SCMBENCH_API_KEY",
        max_in_flight: int = 4,
        batch_size: int = 32,
        max_retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        headers = {}
        token = os.environ.get(api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._http = httpx.Client(timeout=timeout, transport=transport, headers=headers)
        self._slots = threading.Semaphore(max_in_flight)
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.backoff = backoff
        self.sleep = sleep
        self._memo = _Memo()

    def _post(self, route: str, texts: list[str], field: str) -> list:
        with self._slots:
            data = post_json(self._http, f"{self.base_url}{route}", {"texts": texts}, self.max_retries,
                             self.backoff, 8.0, self.sleep)
        items = data.get(field) if isinstance(data, dict) else None
        if not isinstance(items, list) or len(items) != len(texts):
            raise MalformedResponse(f"{route}: expected {len(texts)} items under {field!r}")
        return items

    def _batched(self, texts: Sequence[str], route: str, field: str, convert) -> list:
        out: list = [None] * len(texts)
        todo = []
        for i, t in enumerate(texts):
            hit = self._memo.get(text_digest(t))
            if hit is not None:
                out[i] = hit
            else:
                todo.append(i)
        for start in range(0, len(todo), self.batch_size):
            idx = todo[start:start + self.batch_size]
            items = self._post(route, [texts[i] for i in idx], field)
            for i, item in zip(idx, items):
                value = convert(item)
                self._memo.put(text_digest(texts[i]), value)
                out[i] = value
        return out


class RemoteModel(_Remote):
    def __init__(self, base_url: str, n_classes: int, model_id: str | None = None, **kw):
        super().__init__(base_url, **kw)
        self.n_classes = n_classes
        self.model_id = model_id or f"remote:{self.base_url}"

    def predict_many(self, texts: Sequence[str]) -> list[PredictionVector]:
        def convert(item):
            return PredictionVector(tuple(as_simplex(item, self.n_classes, self.model_id).tolist()), self.model_id)

        return self._batched(list(texts), "/predict", "probs", convert)

    def predict(self, text: str) -> PredictionVector:
        return self.predict_many([text])[0]


# --- concept predictors

ConceptPrediction = dict  # concept name -> probability vector over its codes


def _check_concepts(graph: ScmGraph, raw: Mapping, names: Sequence[str], source: str) -> ConceptPrediction:
    if not isinstance(raw, Mapping):
        raise MalformedResponse(f"{source}: concept predictions must be an object")
    out = {}
    for name in names:
        if name not in raw:
            raise MalformedResponse(f"{source}: missing prediction for concept {name!r}")
        out[name] = as_simplex(raw[name], graph.concept(name).n_values, f"{source} concept {name}")
    return out


class GoldConceptPredictor:
    """One-hot concept vectors read from the markers (deterministic texts only)."""

    def __init__(self, graph: ScmGraph, concepts: Sequence[str] | None = None):
        self.graph = graph
        self.concepts = tuple(concepts or graph.names)
        self.predictor_id = "gold-markers"

    def predict_concepts(self, text: str) -> ConceptPrediction:
        codes = parse_markers(self.graph, text)
        return {c: one_hot(codes[c], self.graph.concept(c).n_values) for c in self.concepts}


class FileBackedConceptPredictor:
    """``concepts.jsonl`` rows ``{text_digest, concepts: {name: [probs]}}``."""

    def __init__(self, path: str | Path, graph: ScmGraph, concepts: Sequence[str] | None = None):
        self.path = Path(path)
        self.graph = graph
        self.concepts = tuple(concepts or graph.names)
        self.predictor_id = f"file:{self.path.name}"
        self._rows = _read_store(self.path)

    def predict_concepts(self, text: str) -> ConceptPrediction:
        row = self._rows.get(text_digest(text))
        if row is None:
            raise UnknownText(f"{self.path}: no concept prediction for text {text_digest(text)[:12]}")
        return _check_concepts(self.graph, row.get("concepts"), self.concepts, str(self.path))


class RemoteConceptPredictor(_Remote):
    def __init__(self, base_url: str, graph: ScmGraph, concepts: Sequence[str] | None = None, **kw):
        super().__init__(base_url, **kw)
        self.graph = graph
        self.concepts = tuple(concepts or graph.names)
        self.predictor_id = f"remote:{self.base_url}"

    def predict_concepts_many(self, texts: Sequence[str]) -> list[ConceptPrediction]:
        return self._batched(list(texts), "/predict_concepts", "concepts",
                             lambda item: _check_concepts(self.graph, item, self.concepts, self.predictor_id))

    def predict_concepts(self, text: str) -> ConceptPrediction:
        return self.predict_concepts_many([text])[0]


# --- embedders


class _DimCheck:
    def __init__(self):
        self.dim: int | None = None
        self._lock = threading.Lock()

    def check(self, vec, source: str) -> np.ndarray:
        try:
            v = np.asarray(vec, dtype=np.float64)
        except (TypeError, ValueError):
            raise MalformedResponse(f"{source}: embedding is not numeric") from None
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise MalformedResponse(f"{source}: embedding must be a finite 1-d vector")
        with self._lock:
            if self.dim is None:
                self.dim = len(v)
            elif len(v) != self.dim:
                raise MalformedResponse(f"{source}: embedding dimension {len(v)} != {self.dim}")
        return v


class BagOfMarkersEmbedder:
    """Concatenated one-hot blocks, one per concept, in declaration order."""

    provider_id = "bag-of-markers"

    def __init__(self, graph: ScmGraph):
        self.graph = graph
        self.dim = sum(c.n_values for c in graph.concepts)

    def blocks(self) -> dict[str, slice]:
        out, start = {}, 0
        for c in self.graph.concepts:
            out[c.name] = slice(start, start + c.n_values)
            start += c.n_values
        return out

    def embed(self, text: str) -> np.ndarray:
        codes = parse_markers(self.graph, text)
        return np.concatenate([one_hot(codes[c.name], c.n_values) for c in self.graph.concepts])


class FileBackedEmbedder:
    """``embeddings.jsonl`` rows ``{text_digest, vec}``."""

    def __init__(self, path: str | Path, provider_id: str | None = None):
        self.path = Path(path)
        self.provider_id = provider_id or f"file:{self.path.name}"
        self._rows = _read_store(self.path)
        self._dims = _DimCheck()

    def embed(self, text: str) -> np.ndarray:
        row = self._rows.get(text_digest(text))
        if row is None:
            raise UnknownText(f"{self.path}: no embedding for text {text_digest(text)[:12]}")
        return self._dims.check(row["vec"], self.provider_id)


class RemoteEmbedder(_Remote):
    def __init__(self, base_url: str, provider_id: str | None = None, **kw):
        super().__init__(base_url, **kw)
        self.provider_id = provider_id or f"remote:{self.base_url}"
        self._dims = _DimCheck()

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self._batched(list(texts), "/embed", "vectors", lambda v: self._dims.check(v, self.provider_id))

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


def write_store(path: str | Path, rows: Sequence[Mapping]) -> None:
    """Write a JSONL store (predictions / concepts / embeddings) sorted by digest."""
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in sorted(rows, key=lambda r: r["text_digest"])]
    atomic_write(Path(path), "".join(line + "\n" for line in lines))
