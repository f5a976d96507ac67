"""Structural causal models over discrete concepts.

A graph is declared as a JSON-compatible mapping (see ``validate_graph``),
validated once, and then treated as immutable. Two evaluation paths exist:
a pure-Python per-record path (``evaluate``) used for dataset generation and
counterfactuals, and a vectorised numpy path (``evaluate_batch``) used for
Monte-Carlo estimates. Both perform the same floating-point operations in the
same order, so they agree bit-for-bit on identical noise.
"""

from __future__ import annotations

import bisect
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CodeOutOfRange,
    CycleDetected,
    EquationParentMismatch,
    FactualMismatch,
    InvalidChange,
    MalformedGraph,
    MultipleOutcomes,
    UnknownConcept,
    UnknownParent,
)

PRNG_ID = "numpy.random.PCG64(SeedSequence)+standard_normal"
TEXT_NODE = "text"


def round_half_away(x: float) -> int:
    """Round to nearest integer, ties away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def round_half_away_array(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True)
class ConceptSpec:
    name: str
    label: str
    values: tuple[str, ...]
    role: str = "concept"

    @property
    def n_values(self) -> int:
        return len(self.values)

    @property
    def codes(self) -> range:
        return range(len(self.values))

    def verbalize(self, code: int) -> str:
        return self.values[code]


@dataclass(frozen=True)
class Term:
    """One weighted source inside a structural equation.

    ``kind="code"`` contributes ``weight * parent``; ``kind="indicator"``
    contributes ``weight * 1{parent == code}``.
    """

    parent: str
    weight: float
    kind: str = "code"
    code: int | None = None

    def contribution(self, parent_value: int) -> float:
        if self.kind == "indicator":
            return self.weight * (1.0 if parent_value == self.code else 0.0)
        return self.weight * parent_value


@dataclass(frozen=True)
class StructuralEquation:
    target: str
    terms: tuple[Term, ...]
    intercept: float
    noise_mean: float
    noise_std: float
    clamp_lo: int
    clamp_hi: int

    def value(self, parents: Mapping[str, int], noise: float) -> int:
        total = 0.0
        for term in self.terms:
            total = total + term.contribution(parents[term.parent])
        total = total + self.intercept
        total = total + noise
        return min(self.clamp_hi, max(self.clamp_lo, round_half_away(total)))

    def value_batch(self, parents: Mapping[str, np.ndarray], noise: np.ndarray) -> np.ndarray:
        total = np.zeros_like(noise, dtype=np.float64)
        for term in self.terms:
            p = parents[term.parent]
            if term.kind == "indicator":
                total = total + term.weight * (p == term.code).astype(np.float64)
            else:
                total = total + term.weight * p.astype(np.float64)
        total = total + self.intercept
        total = total + noise
        return np.clip(round_half_away_array(total), self.clamp_lo, self.clamp_hi).astype(np.int64)


@dataclass(frozen=True)
class RootPrior:
    target: str
    probs: tuple[float, ...]

    @property
    def cdf(self) -> tuple[float, ...]:
        return tuple(itertools.accumulate(self.probs))

    def value(self, u: float) -> int:
        return min(bisect.bisect_right(self.cdf, u), len(self.probs) - 1)

    def value_batch(self, u: np.ndarray) -> np.ndarray:
        cdf = np.array(self.cdf)
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(self.probs) - 1).astype(np.int64)


@dataclass(frozen=True)
class ConceptChange:
    concept: str
    from_code: int
    to_code: int

    def __post_init__(self):
        if self.from_code == self.to_code:
            raise InvalidChange(f"change on {self.concept} must alter the value ({self.from_code})")

    def key(self) -> str:
        return f"{self.concept}:{self.from_code}->{self.to_code}"

    @classmethod
    def parse(cls, key: str) -> "ConceptChange":
        concept, rest = key.split(":", 1)
        a, b = rest.split("->")
        return cls(concept, int(a), int(b))

    def to_json(self) -> dict:
        return {"concept": self.concept, "from": self.from_code, "to": self.to_code}

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "ConceptChange":
        return cls(d["concept"], int(d["from"]), int(d["to"]))

    def __str__(self) -> str:
        return self.key()


@dataclass(frozen=True)
class ExogenousRecord:
    noise: Mapping[str, float]
    persona_id: str
    template_id: str
    seed: int

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "noise": dict(self.noise),
            "persona_id": self.persona_id,
            "template_id": self.template_id,
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "ExogenousRecord":
        return cls(
            noise={k: float(v) for k, v in d["noise"].items()},
            persona_id=d["persona_id"],
            template_id=d["template_id"],
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class ConceptAssignment:
    values: Mapping[str, int]
    interventions: frozenset[str] = field(default_factory=frozenset)

    def __getitem__(self, concept: str) -> int:
        return self.values[concept]

    def diff(self, other: "ConceptAssignment") -> set[str]:
        return {c for c in self.values if self.values[c] != other.values[c]}

    def to_json(self) -> dict:
        return dict(self.values)


class ScmGraph:
    """A validated causal graph with its structural equations.

    Build through ``validate_graph``; instances are not meant to be mutated.
    """

    def __init__(
        self,
        name: str,
        concepts: Sequence[ConceptSpec],
        parents: Mapping[str, tuple[str, ...]],
        equations: Mapping[str, StructuralEquation],
        priors: Mapping[str, RootPrior],
        order: Sequence[str],
        include_outcome_in_changes: bool,
        text_exogenous: Sequence[str],
        spec: Mapping[str, Any],
    ):
        self.name = name
        self.concepts = tuple(concepts)
        self.by_name = {c.name: c for c in self.concepts}
        self.parents = dict(parents)
        self.children = {c.name: tuple(k for k in self.by_name if c.name in self.parents[k]) for c in self.concepts}
        self.equations = dict(equations)
        self.priors = dict(priors)
        self.order = tuple(order)
        self.include_outcome_in_changes = include_outcome_in_changes
        self.text_exogenous = tuple(text_exogenous)
        self.spec = spec
        self.outcome = next(c.name for c in self.concepts if c.role == "outcome")
        self.digest = hashlib.sha256(canonical_json(spec).encode()).hexdigest()

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.concepts)

    @property
    def edges(self) -> tuple[tuple[str, str], ...]:
        return tuple((p, c) for c in self.names for p in self.parents[c])

    def concept(self, name: str) -> ConceptSpec:
        try:
            return self.by_name[name]
        except KeyError:
            raise UnknownConcept(f"{self.name}: unknown concept {name!r}") from None

    def is_root(self, name: str) -> bool:
        return not self.parents[name]

    def __repr__(self) -> str:
        return f"ScmGraph({self.name!r}, order={self.order})"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _prob(value: Any) -> float:
    if isinstance(value, str):
        return float(Fraction(value))
    return float(value)


def validate_graph(spec: Mapping[str, Any]) -> ScmGraph:
    """Validate a raw graph description and return an ``ScmGraph``.

    Expected shape::

        {"name": ..., "include_outcome_in_changes": bool,
         "concepts": [{"name", "label", "role", "values": [{"code", "text"}]}],
         "edges": [[parent, child], ...],
         "priors": {root: [p0, p1, ...]},           # numbers or "1/3" strings
         "equations": [{"target", "terms": [{"parent", "kind", "code"?, "weight"}],
                        "intercept", "noise": {"mean", "std"}, "clamp": [lo, hi]}],
         "text": {"exogenous": ["persona", "template"]}}
    """
    try:
        return _validate(spec)
    except (KeyError, TypeError, AttributeError) as e:
        raise MalformedGraph(f"malformed graph spec: {type(e).__name__}: {e}") from None


def _validate(spec: Mapping[str, Any]) -> ScmGraph:
    raw_concepts = spec["concepts"]

    concepts: list[ConceptSpec] = []
    for rc in raw_concepts:
        values = sorted(rc["values"], key=lambda v: v["code"])
        codes = [int(v["code"]) for v in values]
        if codes != list(range(len(codes))):
            raise MalformedGraph(f"{rc['name']}: codes must be consecutive from 0, got {codes}")
        if len(codes) < 2:
            raise MalformedGraph(f"{rc['name']}: needs at least 2 values")
        texts = [str(v["text"]) for v in values]
        if len(set(texts)) != len(texts):
            raise MalformedGraph(f"{rc['name']}: verbalizations must be distinct")
        role = rc.get("role", "concept")
        if role not in ("outcome", "concept"):
            raise MalformedGraph(f"{rc['name']}: role must be 'outcome' or 'concept'")
        concepts.append(ConceptSpec(rc["name"], rc.get("label", rc["name"]), tuple(texts), role))

    names = [c.name for c in concepts]
    if len(set(names)) != len(names):
        raise MalformedGraph("duplicate concept names")
    if TEXT_NODE in names:
        raise MalformedGraph(f"{TEXT_NODE!r} is reserved for the text node")
    n_outcomes = sum(c.role == "outcome" for c in concepts)
    if n_outcomes > 1:
        raise MultipleOutcomes(f"{n_outcomes} concepts have role=outcome")
    if n_outcomes == 0:
        raise MalformedGraph("exactly one concept must have role=outcome")
    by_name = {c.name: c for c in concepts}

    parents: dict[str, list[str]] = {n: [] for n in names}
    for edge in spec.get("edges", []):
        src, dst = edge
        if src == TEXT_NODE:
            raise MalformedGraph("the text node has no outgoing edges")
        if dst == TEXT_NODE:
            continue
        if src not in by_name:
            raise UnknownParent(f"edge {src}->{dst}: unknown parent {src!r}")
        if dst not in by_name:
            raise UnknownConcept(f"edge {src}->{dst}: unknown child {dst!r}")
        if src not in parents[dst]:
            parents[dst].append(src)

    order = _topological_order(names, parents)

    equations: dict[str, StructuralEquation] = {}
    for re in spec.get("equations", []):
        target = re["target"]
        if target not in by_name:
            raise UnknownConcept(f"equation for unknown concept {target!r}")
        terms = []
        for rt in re.get("terms", []):
            p = rt["parent"]
            if p not in parents[target]:
                raise EquationParentMismatch(f"{target}: term on {p!r}, which is not a declared parent")
            kind = rt.get("kind", "code")
            code = rt.get("code")
            if kind == "indicator":
                if code is None or not 0 <= int(code) < by_name[p].n_values:
                    raise MalformedGraph(f"{target}: indicator on {p} needs a valid code")
                code = int(code)
            elif kind != "code":
                raise MalformedGraph(f"{target}: unknown term kind {kind!r}")
            terms.append(Term(p, float(rt["weight"]), kind, code))
        covered = {t.parent for t in terms}
        missing = [p for p in parents[target] if p not in covered]
        if missing:
            raise EquationParentMismatch(f"{target}: parents {missing} have no term in the equation")
        lo, hi = (int(v) for v in re["clamp"])
        n = by_name[target].n_values
        if not (0 <= lo <= hi < n):
            raise MalformedGraph(f"{target}: clamp [{lo},{hi}] outside code range 0..{n - 1}")
        noise = re.get("noise", {})
        std = float(noise.get("std", 0.0))
        if std < 0:
            raise MalformedGraph(f"{target}: noise std must be >= 0")
        if target in equations:
            raise MalformedGraph(f"{target}: duplicate equation")
        equations[target] = StructuralEquation(
            target, tuple(terms), float(re.get("intercept", 0.0)), float(noise.get("mean", 0.0)), std, lo, hi
        )

    priors: dict[str, RootPrior] = {}
    for target, probs in spec.get("priors", {}).items():
        if target not in by_name:
            raise UnknownConcept(f"prior for unknown concept {target!r}")
        ps = tuple(_prob(p) for p in probs)
        if len(ps) != by_name[target].n_values or any(p < 0 for p in ps) or abs(sum(ps) - 1.0) > 1e-9:
            raise MalformedGraph(f"{target}: prior must be a distribution over {by_name[target].n_values} codes")
        priors[target] = RootPrior(target, ps)

    for n in names:
        if parents[n]:
            if n not in equations:
                raise EquationParentMismatch(f"{n} has parents {parents[n]} but no structural equation")
            if n in priors:
                raise MalformedGraph(f"{n} has parents and must not carry a root prior")
        else:
            if n in equations:
                raise MalformedGraph(f"root concept {n} must carry a categorical prior, not an equation")
            if n not in priors:
                raise MalformedGraph(f"root concept {n} has no categorical prior")

    text = spec.get("text", {}) or {}
    return ScmGraph(
        name=spec.get("name", "graph"),
        concepts=concepts,
        parents={k: tuple(v) for k, v in parents.items()},
        equations=equations,
        priors=priors,
        order=order,
        include_outcome_in_changes=bool(spec.get("include_outcome_in_changes", False)),
        text_exogenous=tuple(text.get("exogenous", ("persona", "template"))),
        spec=json.loads(canonical_json(spec)),
    )


def _topological_order(names: Sequence[str], parents: Mapping[str, Sequence[str]]) -> tuple[str, ...]:
    # Kahn's algorithm; ties resolved by declaration order so the result is stable.
    remaining = {n: set(parents[n]) for n in names}
    order: list[str] = []
    while remaining:
        ready = [n for n in names if n in remaining and not remaining[n]]
        if not ready:
            raise CycleDetected(f"cycle among {sorted(remaining)}")
        nxt = ready[0]
        order.append(nxt)
        del remaining[nxt]
        for deps in remaining.values():
            deps.discard(nxt)
    return tuple(order)


def load_graph(path) -> ScmGraph:
    with open(path, encoding="utf-8") as f:
        return validate_graph(json.load(f))


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def draw_index(rng: np.random.Generator, n: int) -> int:
    return int(rng.integers(n))


def sample_exogenous(
    graph: ScmGraph,
    seed: int,
    persona_ids: Sequence[str] = ("persona-0",),
    template_ids: Sequence[str] = ("template-0",),
) -> ExogenousRecord:
    """Draw one individual's exogenous values, deterministically from ``seed``.

    Root concepts get a uniform draw in [0, 1) that is later pushed through the
    prior's inverse CDF; every other concept gets ``mean + std * z``.
    Persona and template are drawn last, uniformly over the given id pools.
    """
    rng = _rng(seed)
    noise: dict[str, float] = {}
    for name in graph.order:
        if graph.is_root(name):
            noise[name] = float(rng.random())
        else:
            eq = graph.equations[name]
            noise[name] = eq.noise_mean + eq.noise_std * float(rng.standard_normal())
    persona = persona_ids[draw_index(rng, len(persona_ids))]
    template = template_ids[draw_index(rng, len(template_ids))]
    return ExogenousRecord(noise, persona, template, int(seed))


def _check_interventions(graph: ScmGraph, interventions: Mapping[str, int]) -> None:
    for name, code in interventions.items():
        spec = graph.concept(name)
        if not 0 <= int(code) < spec.n_values:
            raise CodeOutOfRange(f"{name}={code} outside 0..{spec.n_values - 1}")


def evaluate(
    graph: ScmGraph, exo: ExogenousRecord, interventions: Mapping[str, int] | None = None
) -> ConceptAssignment:
    """Solve the SCM for one exogenous record, optionally under do()."""
    interventions = dict(interventions or {})
    _check_interventions(graph, interventions)
    values: dict[str, int] = {}
    for name in graph.order:
        if name in interventions:
            values[name] = int(interventions[name])
        elif graph.is_root(name):
            values[name] = graph.priors[name].value(exo.noise[name])
        else:
            values[name] = graph.equations[name].value(values, exo.noise[name])
    return ConceptAssignment(values, frozenset(interventions))


def counterfactual_assignment(graph: ScmGraph, exo: ExogenousRecord, change: ConceptChange) -> ConceptAssignment:
    """Abduction (reuse ``exo``), action (do on the concept), prediction (re-solve)."""
    factual = evaluate(graph, exo)
    if factual[change.concept] != change.from_code:
        raise FactualMismatch(
            f"factual {change.concept}={factual[change.concept]} but change starts from {change.from_code}"
        )
    return evaluate(graph, exo, {change.concept: change.to_code})


def enumerate_changes(
    graph: ScmGraph, concept: str | None = None, include_outcome: bool | None = None
) -> list[ConceptChange]:
    if concept is not None:
        names = [graph.concept(concept).name]
    else:
        if include_outcome is None:
            include_outcome = graph.include_outcome_in_changes
        names = [c.name for c in graph.concepts if include_outcome or c.role != "outcome"]
    out = []
    for name in names:
        codes = graph.concept(name).codes
        out.extend(ConceptChange(name, a, b) for a in codes for b in codes if a != b)
    return out


def changeable_concepts(graph: ScmGraph) -> list[str]:
    return [c.name for c in graph.concepts if graph.include_outcome_in_changes or c.role != "outcome"]


def _closure(graph: ScmGraph, concept: str, step: Mapping[str, Iterable[str]]) -> set[str]:
    graph.concept(concept)
    seen: set[str] = set()
    stack = list(step[concept])
    while stack:
        n = stack.pop()
        if n not in seen:
            seen.add(n)
            stack.extend(step[n])
    return seen


def ancestors(graph: ScmGraph, concept: str) -> set[str]:
    return _closure(graph, concept, graph.parents)


def descendants(graph: ScmGraph, concept: str) -> set[str]:
    return _closure(graph, concept, graph.children)


# vectorised path

def sample_noise_batch(graph: ScmGraph, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    noise = {}
    for name in graph.order:
        if graph.is_root(name):
            noise[name] = rng.random(n)
        else:
            eq = graph.equations[name]
            noise[name] = eq.noise_mean + eq.noise_std * rng.standard_normal(n)
    return noise


def stack_noise(graph: ScmGraph, records: Sequence[ExogenousRecord]) -> dict[str, np.ndarray]:
    return {name: np.array([r.noise[name] for r in records], dtype=np.float64) for name in graph.order}


def evaluate_batch(
    graph: ScmGraph, noise: Mapping[str, np.ndarray], interventions: Mapping[str, int] | None = None
) -> dict[str, np.ndarray]:
    interventions = dict(interventions or {})
    _check_interventions(graph, interventions)
    n = len(next(iter(noise.values())))
    values: dict[str, np.ndarray] = {}
    for name in graph.order:
        if name in interventions:
            values[name] = np.full(n, int(interventions[name]), dtype=np.int64)
        elif graph.is_root(name):
            values[name] = graph.priors[name].value_batch(noise[name])
        else:
            values[name] = graph.equations[name].value_batch(values, noise[name])
    return values
