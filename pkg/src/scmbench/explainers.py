"""Explanation methods: candidate matching and LLM counterfactual generation.

Every method returns an ``ExplanationVector``: an estimate of the change in
the explained model's prediction when one concept of ``x`` is changed.
Matching methods average ``f(candidate) - f(x)`` over up to ``k`` pool texts
that carry the target value; counterfactual generation asks an editor to
rewrite ``x`` and uses ``f(edit) - f(x)``.
"""

from __future__ import annotations

import hashlib
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .adapters import text_digest
from .dgp import DgpBundle
from .errors import EmptyCandidateSet, MalformedResponse, UnknownMethod, UnknownStrategy, UnknownText
from .render import DiskCache, render_deterministic, sha256_hex
from .scm import ConceptChange, ScmGraph, ancestors, canonical_json, changeable_concepts, counterfactual_assignment, descendants

ZERO_SUM_TOL = 1e-6
DEFAULT_K = 3
STRATEGIES = ("only_change", "fix_confounders", "fix_all", "mediators_confounders")


@dataclass(frozen=True)
class ExplanationVector:
    example_id: str
    change: ConceptChange
    method_id: str
    delta: tuple[float, ...]

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=np.float64)
        if d.ndim != 1 or not np.all(np.isfinite(d)):
            raise MalformedResponse(f"{self.method_id}: explanation must be a finite vector")
        if np.any(np.abs(d) > 1 + ZERO_SUM_TOL) or abs(d.sum()) > ZERO_SUM_TOL:
            raise MalformedResponse(f"{self.method_id}: explanation is not a difference of two distributions")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.delta)

    def to_json(self) -> dict:
        return {"example_id": self.example_id, "change": self.change.key(), "method_id": self.method_id,
                "delta": list(self.delta)}

    @classmethod
    def from_json(cls, d) -> "ExplanationVector":
        return cls(d["example_id"], ConceptChange.parse(d["change"]), d["method_id"], tuple(d["delta"]))


@dataclass(frozen=True)
class Query:
    """The text being explained with its prediction f(x)."""

    example_id: str
    text: str
    probs: np.ndarray


@dataclass(frozen=True)
class Candidate:
    id: str
    text: str
    labels: Mapping[str, int]
    probs: np.ndarray


class CandidatePool:
    """Immutable candidate set indexed by (concept, code).

    ``labels`` are the concept codes used for the target filter: gold codes
    when the pool comes from a generated dataset, predicted ones otherwise.
    Embeddings and concept predictions are computed on first use and memoised
    per provider, so concurrent explainers share one pass over the pool.
    """

    def __init__(self, graph: ScmGraph, candidates: Sequence[Candidate]):
        self.graph = graph
        self.candidates = tuple(sorted(candidates, key=lambda c: c.id))
        self.index: dict[tuple[str, int], tuple[int, ...]] = {}
        for c in graph.concepts:
            for code in c.codes:
                self.index[(c.name, code)] = tuple(
                    i for i, cand in enumerate(self.candidates) if cand.labels.get(c.name) == code
                )
        self._lock = threading.Lock()
        self._memo: dict[tuple[str, str], object] = {}

    def __len__(self) -> int:
        return len(self.candidates)

    def _cached(self, kind: str, provider_id: str, compute: Callable[[], object]):
        key = (kind, provider_id)
        with self._lock:
            if key not in self._memo:
                self._memo[key] = compute()
            return self._memo[key]

    def embeddings(self, embedder) -> np.ndarray:
        return self._cached("emb", embedder.provider_id,
                            lambda: np.stack([embedder.embed(c.text) for c in self.candidates]))

    def concept_predictions(self, predictor) -> list[dict]:
        return self._cached("concepts", predictor.predictor_id,
                            lambda: [predictor.predict_concepts(c.text) for c in self.candidates])

    def eligible(self, change: ConceptChange, x: Query) -> list[int]:
        idx = [i for i in self.index.get((change.concept, change.to_code), ()) if self.candidates[i].text != x.text]
        if not idx:
            raise EmptyCandidateSet(f"no candidate with {change.concept}={change.to_code}")
        return idx


def build_pool(graph: ScmGraph, items: Sequence[tuple[str, str, Mapping[str, int]]], model, jobs: int = 1) -> CandidatePool:
    """Pool from ``(id, text, labels)`` triples; ``model`` supplies f(candidate)."""
    def make(item):
        cid, text, labels = item
        return Candidate(cid, text, dict(labels), model.predict(text).array)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            cands = list(ex.map(make, items))
    else:
        cands = [make(i) for i in items]
    return CandidatePool(graph, cands)


def _delta(pool: CandidatePool, chosen: Sequence[int], x: Query) -> np.ndarray:
    preds = np.stack([pool.candidates[i].probs for i in chosen])
    return preds.mean(axis=0) - np.asarray(x.probs, dtype=np.float64)


def _cosine_sims(q: np.ndarray, mat: np.ndarray) -> np.ndarray:
    qn = np.linalg.norm(q)
    mn = np.linalg.norm(mat, axis=1)
    denom = qn * mn
    dots = mat @ q
    return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)


def _top_k(pool: CandidatePool, idx: Sequence[int], sims: np.ndarray, k: int) -> list[int]:
    # highest similarity first; equal similarities fall back to candidate id order
    return sorted(idx, key=lambda i: (-sims[i], pool.candidates[i].id))[:k]


def item_rng(seed: int, example_id: str, change: ConceptChange) -> np.random.Generator:
    """Per-item generator, independent of the order items are processed in."""
    h = int.from_bytes(hashlib.sha256(f"{example_id}|{change.key()}".encode()).digest()[:8], "big")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), h])))


def _other_concepts(graph: ScmGraph, target: str) -> list[str]:
    return [c for c in changeable_concepts(graph) if c != target]


def explain_semantic_match(
    pool: CandidatePool, x: Query, change: ConceptChange, embedder, k: int = DEFAULT_K, method_id: str | None = None,
) -> ExplanationVector:
    idx = pool.eligible(change, x)
    sims = _cosine_sims(embedder.embed(x.text), pool.embeddings(embedder))
    chosen = _top_k(pool, idx, sims, k)
    return ExplanationVector(x.example_id, change, method_id or f"match:{embedder.provider_id}",
                             tuple(_delta(pool, chosen, x).tolist()))


def _argmax_codes(pred: Mapping[str, np.ndarray], names: Sequence[str]) -> tuple[int, ...]:
    return tuple(int(np.argmax(pred[n])) for n in names)


def explain_approx(
    pool: CandidatePool, x: Query, change: ConceptChange, predictor, k: int = DEFAULT_K, seed: int = 0,
    method_id: str = "approx",
) -> ExplanationVector:
    """Exact match on every other concept; one mismatch allowed only when nothing matches exactly."""
    names = _other_concepts(pool.graph, change.concept)
    want = _argmax_codes(predictor.predict_concepts(x.text), names)
    preds = pool.concept_predictions(predictor)
    idx = pool.eligible(change, x)
    mismatches = {i: sum(a != b for a, b in zip(_argmax_codes(preds[i], names), want)) for i in idx}
    eligible = [i for i in idx if mismatches[i] == 0] or [i for i in idx if mismatches[i] == 1]
    if not eligible:
        raise EmptyCandidateSet(f"{method_id}: no candidate within one mismatch for {change}")
    order = item_rng(seed, x.example_id, change).permutation(len(eligible))
    chosen = [eligible[int(j)] for j in order[:k]]
    return ExplanationVector(x.example_id, change, method_id, tuple(_delta(pool, chosen, x).tolist()))


def _concat(pred: Mapping[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    return np.concatenate([np.asarray(pred[n], dtype=np.float64) for n in names])


def explain_convecs(
    pool: CandidatePool, x: Query, change: ConceptChange, predictor, k: int = DEFAULT_K,
    include_target: bool = False, method_id: str = "convecs",
) -> ExplanationVector:
    """Cosine over concatenated concept-probability vectors; the target block is left out by default."""
    names = _other_concepts(pool.graph, change.concept)
    if include_target:
        names = [n for n in changeable_concepts(pool.graph) if n == change.concept or n in names]
    preds = pool.concept_predictions(predictor)
    idx = pool.eligible(change, x)
    mat = np.stack([_concat(p, names) for p in preds])
    sims = _cosine_sims(_concat(predictor.predict_concepts(x.text), names), mat)
    chosen = _top_k(pool, idx, sims, k)
    return ExplanationVector(x.example_id, change, method_id, tuple(_delta(pool, chosen, x).tolist()))


def explain_random_match(
    pool: CandidatePool, x: Query, change: ConceptChange, k: int = DEFAULT_K, seed: int = 0,
    method_id: str = "random_match",
) -> ExplanationVector:
    """Baseline: k candidates with the target value, drawn uniformly."""
    idx = pool.eligible(change, x)
    order = item_rng(seed, x.example_id, change).permutation(len(idx))
    chosen = [idx[int(j)] for j in order[:k]]
    return ExplanationVector(x.example_id, change, method_id, tuple(_delta(pool, chosen, x).tolist()))


# --- counterfactual generation


def _labels(graph: ScmGraph, names) -> str:
    keep = set(names)
    return ", ".join(c.label for c in graph.concepts if c.name in keep)


def cf_roles(graph: ScmGraph, concept: str) -> tuple[list[str], list[str]]:
    """Confounders (ancestors) and mediators (descendants), in declaration order."""
    anc, desc = ancestors(graph, concept), descendants(graph, concept)
    return [c for c in graph.names if c in anc], [c for c in graph.names if c in desc]


def build_cf_prompt(strategy: str, bundle: DgpBundle, text: str, change: ConceptChange) -> str:
    if strategy not in STRATEGIES:
        raise UnknownStrategy(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    g = bundle.graph
    spec = g.concept(change.concept)
    confounders, mediators = cf_roles(g, change.concept)
    slots = {
        "concept": spec.label,
        "text": text,
        "old_value_text": spec.verbalize(change.from_code),
        "new_value_text": spec.verbalize(change.to_code),
        "confounders": _labels(g, confounders),
        "mediators": _labels(g, mediators),
        "all_concepts": _labels(g, [n for n in g.names if n != change.concept]),
    }
    return bundle.prompts[f"cf_{strategy}"].format_map(slots).strip()


class ScmEditor:
    """Stub editor that applies the true structural counterfactual.

    It looks ``text`` up among known examples, recomputes the assignment under
    the change with the example's exogenous record, and re-renders with the
    same persona and template. Used for closed-loop checks.
    """

    editor_id = "scm-edit"

    def __init__(self, bundle: DgpBundle, examples: Sequence):
        self.bundle = bundle
        self._by_digest = {text_digest(e.text): e for e in examples}

    def edit(self, prompt: str, text: str, change: ConceptChange) -> str:
        ex = self._by_digest.get(text_digest(text))
        if ex is None:
            raise UnknownText(f"scm editor: unknown text {text_digest(text)[:12]}")
        cf = counterfactual_assignment(self.bundle.graph, ex.exo, change)
        return render_deterministic(self.bundle, cf, self.bundle.persona(ex.exo.persona_id),
                                    self.bundle.template(ex.exo.template_id)).text


class LlmEditor:
    """Sends the strategy prompt as a single user message."""

    def __init__(self, client):
        self.client = client
        self.editor_id = f"llm:{client.model}"

    def edit(self, prompt: str, text: str, change: ConceptChange) -> str:
        return self.client.complete([{"role": "user", "content": prompt}]).strip()


def cfgen_key(strategy: str, text: str, change: ConceptChange) -> str:
    return sha256_hex(canonical_json({"strategy": strategy, "text_digest": text_digest(text), "change": change.key()}))


def _namespace(editor_id: str) -> str:
    return "cfgen-" + re.sub(r"[^A-Za-z0-9._-]", "_", editor_id)


def explain_cfgen(
    strategy: str, bundle: DgpBundle, editor, model, x: Query, change: ConceptChange,
    cache: DiskCache | None = None,
) -> ExplanationVector:
    prompt = build_cf_prompt(strategy, bundle, x.text, change)
    if cache is None:
        edited = editor.edit(prompt, x.text, change)
    else:
        edited, _ = cache.get_or_compute(_namespace(editor.editor_id), cfgen_key(strategy, x.text, change),
                                         lambda: editor.edit(prompt, x.text, change))
    delta = model.predict(edited).array - np.asarray(x.probs, dtype=np.float64)
    return ExplanationVector(x.example_id, change, f"cfgen:{strategy}:{editor.editor_id}", tuple(delta.tolist()))


# --- method registry


@dataclass
class MethodSpec:
    """A named explainer bound to its providers; ``run(pool, x, change)``."""

    name: str
    run: Callable[[CandidatePool, Query, ConceptChange], ExplanationVector]
    providers: dict = field(default_factory=dict)


MATCH_METHODS = ("ft_match", "pt_match", "st_match", "approx", "convecs", "random_match")


def make_method(
    name: str, k: int = DEFAULT_K, seed: int = 0, embedder=None, predictor=None, bundle: DgpBundle | None = None,
    editor=None, model=None, strategy: str = "mediators_confounders", cache: DiskCache | None = None,
) -> MethodSpec:
    """Bind a method name to its providers.

    ``ft_match``, ``pt_match`` and ``st_match`` are the same semantic matcher;
    they differ only in which embedding provider is passed in.
    """
    if name in ("ft_match", "pt_match", "st_match"):
        if embedder is None:
            raise UnknownMethod(f"{name} needs an embedding provider")
        return MethodSpec(name, lambda p, x, c: explain_semantic_match(p, x, c, embedder, k, name),
                          {"embedder": embedder.provider_id})
    if name in ("approx", "convecs"):
        if predictor is None:
            raise UnknownMethod(f"{name} needs a concept predictor")
        if name == "approx":
            run = lambda p, x, c: explain_approx(p, x, c, predictor, k, seed)  # noqa: E731
        else:
            run = lambda p, x, c: explain_convecs(p, x, c, predictor, k)  # noqa: E731
        return MethodSpec(name, run, {"predictor": predictor.predictor_id})
    if name == "random_match":
        return MethodSpec(name, lambda p, x, c: explain_random_match(p, x, c, k, seed))
    if name == "cfgen":
        if editor is None or model is None or bundle is None:
            raise UnknownMethod("cfgen needs an editor, an explained model and the dataset bundle")
        if strategy not in STRATEGIES:
            raise UnknownStrategy(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
        run = lambda p, x, c: explain_cfgen(strategy, bundle, editor, model, x, c, cache)  # noqa: E731
        return MethodSpec(f"cfgen:{strategy}", run, {"editor": editor.editor_id, "strategy": strategy})
    raise UnknownMethod(f"unknown method {name!r}")


def explain_items(
    method: MethodSpec, pool: CandidatePool, items: Sequence[tuple[Query, ConceptChange]], jobs: int = 1,
    skip_empty: bool = False,
) -> list[ExplanationVector | None]:
    """Run one method over (query, change) items; output order follows ``items``.

    With ``skip_empty`` an item whose candidate set is empty yields None
    instead of raising.
    """
    def run(item):
        x, change = item
        try:
            return method.run(pool, x, change)
        except EmptyCandidateSet:
            if skip_empty:
                return None
            raise

    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(run, items))
    return [run(i) for i in items]
