"""Reference effects, Error-Distance / Order-Faithfulness, global scores, true effects."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptySet,
    KeyMismatch,
    LengthMismatch,
    MissingEndpointCounterfactual,
    MissingExplanation,
    NoChangesForConcept,
    NotIdentifiable,
)
from .scm import ScmGraph, _rng, ancestors, evaluate_batch, sample_noise_batch


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"vectors have shapes {a.shape} and {b.shape}")
    return a, b


def icace(f_x, f_cf) -> np.ndarray:
    """f(counterfactual) - f(x)."""
    fx, fcf = _pair(f_x, f_cf)
    return fcf - fx


def cace_empirical(f_to_c: Sequence, f_to_c_prime: Sequence) -> np.ndarray:
    """Mean over D of f(x -> c') - f(x -> c); rows are aligned per base example."""
    if len(f_to_c) != len(f_to_c_prime):
        raise LengthMismatch(f"{len(f_to_c)} vs {len(f_to_c_prime)} endpoint predictions")
    if not len(f_to_c):
        raise EmptySet("empirical CaCE over an empty set")
    if any(v is None for v in f_to_c) or any(v is None for v in f_to_c_prime):
        raise MissingEndpointCounterfactual("an endpoint counterfactual prediction is missing")
    a = np.asarray(f_to_c, dtype=np.float64)
    b = np.asarray(f_to_c_prime, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"endpoint predictions have shapes {a.shape} and {b.shape}")
    return (b - a).mean(axis=0)


@dataclass(frozen=True)
class ErrorDistance:
    cosine: float
    l2: float
    norm_diff: float

    @property
    def mean(self) -> float:
        return (self.cosine + self.l2 + self.norm_diff) / 3


def cosine_distance(a, b) -> float:
    """1 - cos(a, b); a zero vector is at distance 1 from anything non-zero and 0 from zero."""
    a, b = _pair(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 and nb == 0:
        return 0.0
    if na == 0 or nb == 0:
        return 1.0
    if np.array_equal(a, b):
        return 0.0  # exact, rather than 1 - cos with rounding either side of zero
    return float(np.clip(1.0 - np.dot(a, b) / (na * nb), 0.0, 2.0))


def error_distance(ref, expl) -> ErrorDistance:
    r, e = _pair(ref, expl)
    return ErrorDistance(
        cosine=cosine_distance(r, e),
        l2=float(np.linalg.norm(r - e)),
        norm_diff=float(abs(np.linalg.norm(r) - np.linalg.norm(e))),
    )


def sign_agreement(a, b) -> float:
    """Fraction of entries with equal sign, sgn(0) = 0."""
    a, b = _pair(a, b)
    return float(np.mean(np.sign(a) == np.sign(b)))


def local_of(ref1, ref2, expl1, expl2) -> float:
    r1, r2 = _pair(ref1, ref2)
    e1, e2 = _pair(expl1, expl2)
    _pair(r1, e1)
    return sign_agreement(r1 - r2, e1 - e2)


@dataclass(frozen=True)
class LocalScores:
    ed_bar: float | None
    of_bar: float | None
    n_changes: int
    n_of_pairs: int
    n_empty_pairs: int
    ties: int
    ed_per_change: Mapping[str, float]


def aggregate_local(
    change_sets: Mapping[Hashable, Sequence[Hashable]],
    refs: Mapping[tuple, Sequence[float]],
    expls: Mapping[tuple, Sequence[float]],
) -> LocalScores:
    """ED-bar and OF-bar over D_c sets.

    ``refs`` and ``expls`` are keyed by ``(example_id, change_key)``. OF-bar
    averages over ordered change pairs whose example sets intersect; pairs with
    an empty intersection are left out of the normaliser, and OF-bar is None if
    no pair intersects.
    """
    def get(store, key, what):
        try:
            return store[key]
        except KeyError:
            raise MissingExplanation(f"no {what} for example {key[0]} change {key[1]}") from None

    ed_per_change = {}
    for c, members in change_sets.items():
        if not members:
            continue
        eds = [error_distance(get(refs, (x, c), "reference"), get(expls, (x, c), "explanation")).mean
               for x in members]
        ed_per_change[c] = float(np.mean(eds))
    ed_bar = float(np.mean(list(ed_per_change.values()))) if ed_per_change else None

    sets = {c: set(m) for c, m in change_sets.items()}
    keys = list(change_sets)
    of_terms = []
    empty = 0
    ties = 0
    for c1 in keys:
        for c2 in keys:
            if c1 == c2:
                continue
            shared = sorted(sets[c1] & sets[c2], key=str)
            if not shared:
                empty += 1
                continue
            vals = []
            for x in shared:
                r1, r2 = get(refs, (x, c1), "reference"), get(refs, (x, c2), "reference")
                e1, e2 = get(expls, (x, c1), "explanation"), get(expls, (x, c2), "explanation")
                d_ref = np.asarray(r1, dtype=np.float64) - np.asarray(r2, dtype=np.float64)
                ties += int(np.sum(d_ref == 0))
                vals.append(local_of(r1, r2, e1, e2))
            of_terms.append(float(np.mean(vals)))
    of_bar = float(np.mean(of_terms)) if of_terms else None
    return LocalScores(ed_bar, of_bar, len(ed_per_change), len(of_terms), empty, ties, ed_per_change)


def global_importance(caces_by_concept: Mapping[str, Sequence[Sequence[float]]]) -> dict[str, float]:
    """Per concept: mean over its changes of the abs-sum of the CaCE vector."""
    out = {}
    for concept, vecs in caces_by_concept.items():
        if not len(vecs):
            raise NoChangesForConcept(f"no CaCE vectors for concept {concept}")
        out[concept] = float(np.mean([np.abs(np.asarray(v, dtype=np.float64)).sum() for v in vecs]))
    return out


def global_of(gold: Mapping[str, float], method: Mapping[str, float]) -> float:
    """Fraction of ordered concept pairs whose importance order agrees (sgn(0) = 0)."""
    if set(gold) != set(method):
        raise KeyMismatch(f"concept sets differ: {sorted(set(gold) ^ set(method))}")
    keys = sorted(gold)
    pairs = [(i, j) for i in keys for j in keys if i != j]
    if not pairs:
        raise EmptySet("global OF needs at least two concepts")
    agree = sum(np.sign(gold[i] - gold[j]) == np.sign(method[i] - method[j]) for i, j in pairs)
    return agree / len(pairs)


def sensitivity(icaces: Sequence[Sequence[float]]) -> float:
    """Mean abs-sum of ICaCE vectors over (examples x changes) of one concept."""
    if not len(icaces):
        raise EmptySet("sensitivity over an empty set")
    return float(np.mean([np.abs(np.asarray(v, dtype=np.float64)).sum() for v in icaces]))


# --- Monte-Carlo ground truth

TRUE_EFFECT_MODES = ("individual", "population")
DEFAULT_CHUNK = 250_000


def _check_identifiable(graph: ScmGraph, concept: str) -> None:
    graph.concept(concept)
    if concept == graph.outcome:
        raise NotIdentifiable(f"{concept} is the outcome itself")
    if graph.outcome in ancestors(graph, concept):
        raise NotIdentifiable(f"{graph.outcome} is an ancestor of {concept}; interventions on it cannot move the outcome")


def true_effect_mc(
    graph: ScmGraph,
    concept: str,
    n_samples: int = 1_000_000,
    seed: int = 0,
    mode: str = "individual",
    chunk: int = DEFAULT_CHUNK,
) -> float:
    """Monte-Carlo effect of ``concept`` on the outcome, in one-hot abs-sum units.

    ``individual``: for each sampled individual with factual value c and every
    c' != c, add |onehot(Y_cf) - onehot(Y)|_1 (0 or 2); return the mean over
    all (individual, change) items, so changes are weighted by how often
    their start value occurs.

    ``population``: sum_y |P(Y=y | do(c')) - P(Y=y | do(c))| averaged over all
    ordered pairs c != c'.
    """
    if mode not in TRUE_EFFECT_MODES:
        raise ValueError(f"mode must be one of {TRUE_EFFECT_MODES}")
    _check_identifiable(graph, concept)
    k = graph.concept(concept).n_values
    n_y = graph.concept(graph.outcome).n_values
    y = graph.outcome
    rng = _rng(seed)
    flips = 0
    counts = np.zeros((k, n_y))
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        noise = sample_noise_batch(graph, m, rng)
        factual = evaluate_batch(graph, noise) if mode == "individual" else None
        for code in range(k):
            y_do = evaluate_batch(graph, noise, {concept: code})[y]
            if mode == "individual":
                moved = factual[concept] != code
                flips += int(np.count_nonzero(y_do[moved] != factual[y][moved]))
            else:
                counts[code] += np.bincount(y_do, minlength=n_y)
        done += m
    if mode == "individual":
        return 2.0 * flips / (n_samples * (k - 1))
    p = counts / n_samples
    diffs = [np.abs(p[b] - p[a]).sum() for a in range(k) for b in range(k) if a != b]
    return float(np.mean(diffs))


def interventional_distribution(graph: ScmGraph, concept: str, code: int, n_samples: int, seed: int = 0) -> np.ndarray:
    """Estimate P(Y | do(concept = code))."""
    rng = _rng(seed)
    noise = sample_noise_batch(graph, n_samples, rng)
    y = evaluate_batch(graph, noise, {concept: code})[graph.outcome]
    return np.bincount(y, minlength=graph.concept(graph.outcome).n_values) / n_samples


def true_effects(
    graph: ScmGraph, concepts: Sequence[str] | None = None, n_samples: int = 1_000_000, seed: int = 0,
    mode: str = "individual",
) -> dict[str, float | None]:
    """Per-concept true effects; None where the effect is not identifiable."""
    out = {}
    for c in concepts or [c.name for c in graph.concepts if c.role != "outcome"]:
        try:
            out[c] = true_effect_mc(graph, c, n_samples, seed, mode)
        except NotIdentifiable:
            out[c] = None
    return out
