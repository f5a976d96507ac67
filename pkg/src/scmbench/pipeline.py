"""Dataset generation: splits, interventional pairs, endpoint counterfactuals, persistence.

On-disk layout of a dataset directory::

    manifest.json     schema version, graph digest + spec, seeds, counts, file digests
    dataset.jsonl     one Example per line, ordered by global index
    pairs.jsonl       one InterventionalPair per line, ordered by (example index, draw order)
    endpoints.jsonl   counterfactual texts under do(C=c) for every concept value (optional)
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import chain
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dgp import DgpBundle
from .errors import (
    ConfigError,
    CorruptLine,
    DatasetExists,
    FileDigestMismatch,
    GraphDigestMismatch,
    InsufficientChanges,
    MissingEndpointCounterfactual,
    ScmBenchError,
    SchemaVersionMismatch,
)
from .render import DeterministicRenderer, atomic_write
from .scm import (
    PRNG_ID,
    ConceptChange,
    ExogenousRecord,
    canonical_json,
    changeable_concepts,
    counterfactual_assignment,
    enumerate_changes,
    evaluate,
    sample_exogenous,
    validate_graph,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = "scmbench.dataset/1"
SPLITS = ("model_train", "model_test", "method_train", "interventional")
SEED_BITS = 56
SEED_MASK = (1 << SEED_BITS) - 1


@dataclass(frozen=True)
class Example:
    id: str
    split: str
    index: int
    exo: ExogenousRecord
    assignment: Mapping[str, int]
    text: str
    prompt_hash: str

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "split": self.split,
            "index": self.index,
            "exo": self.exo.to_json(),
            "assignment": dict(self.assignment),
            "text": self.text,
            "prompt_hash": self.prompt_hash,
        }

    @classmethod
    def from_json(cls, d) -> "Example":
        return cls(d["id"], d["split"], int(d["index"]), ExogenousRecord.from_json(d["exo"]),
                   {k: int(v) for k, v in d["assignment"].items()}, d["text"], d["prompt_hash"])


@dataclass(frozen=True)
class InterventionalPair:
    example_id: str
    change: ConceptChange
    cf_assignment: Mapping[str, int]
    cf_text: str
    prompt_hash: str

    @property
    def id(self) -> str:
        return f"{self.example_id}:{self.change.key()}"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "example_id": self.example_id,
            "change": self.change.to_json(),
            "cf_assignment": dict(self.cf_assignment),
            "cf_text": self.cf_text,
            "prompt_hash": self.prompt_hash,
        }

    @classmethod
    def from_json(cls, d) -> "InterventionalPair":
        return cls(d["example_id"], ConceptChange.from_json(d["change"]),
                   {k: int(v) for k, v in d["cf_assignment"].items()}, d["cf_text"], d["prompt_hash"])


@dataclass(frozen=True)
class EndpointText:
    """Text of one example re-rendered under do(concept = code)."""

    example_id: str
    concept: str
    code: int
    assignment: Mapping[str, int]
    text: str
    prompt_hash: str

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "concept": self.concept,
            "code": self.code,
            "assignment": dict(self.assignment),
            "text": self.text,
            "prompt_hash": self.prompt_hash,
        }

    @classmethod
    def from_json(cls, d) -> "EndpointText":
        return cls(d["example_id"], d["concept"], int(d["code"]), {k: int(v) for k, v in d["assignment"].items()},
                   d["text"], d["prompt_hash"])


@dataclass
class Dataset:
    name: str
    graph_spec: Mapping
    seed: int
    sizes: Mapping[str, int]
    renderer_id: str
    examples: list[Example] = field(default_factory=list)
    pairs: list[InterventionalPair] = field(default_factory=list)
    endpoints: list[EndpointText] = field(default_factory=list)
    cf_seed: int | None = None
    n_changes: int | None = None

    def __post_init__(self):
        self.graph = validate_graph(self.graph_spec)

    @property
    def by_id(self) -> dict[str, Example]:
        return {e.id: e for e in self.examples}

    def split(self, name: str) -> list[Example]:
        return [e for e in self.examples if e.split == name]

    def change_sets(self) -> dict[str, list[str]]:
        """D_c: example ids per change key, in pair order."""
        out: dict[str, list[str]] = {}
        for p in self.pairs:
            out.setdefault(p.change.key(), []).append(p.example_id)
        return out

    def intersections(self) -> dict[tuple[str, str], set[str]]:
        sets = {k: set(v) for k, v in self.change_sets().items()}
        return {(a, b): sets[a] & sets[b] for a in sets for b in sets if a != b}

    def endpoint(self, example_id: str, concept: str, code: int) -> EndpointText:
        idx = getattr(self, "_endpoint_index", None)
        if idx is None or len(idx) != len(self.endpoints):
            idx = {(e.example_id, e.concept, e.code): e for e in self.endpoints}
            self._endpoint_index = idx
        try:
            return idx[(example_id, concept, code)]
        except KeyError:
            raise MissingEndpointCounterfactual(f"no text for {example_id} under do({concept}={code})") from None

    def counts(self) -> dict:
        keys = {p.change.key() for p in self.pairs}
        by_id = self.by_id
        return {
            "examples": {s: len(self.split(s)) for s in SPLITS},
            "change_instances": len(self.pairs),
            "distinct_pairs": len({(by_id[p.example_id].text, p.cf_text) for p in self.pairs}),
            "distinct_changes": len(keys),
            "endpoints": len(self.endpoints),
        }

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        fields = ("name", "seed", "renderer_id", "examples", "pairs", "endpoints", "cf_seed", "n_changes")
        return (
            all(getattr(self, f) == getattr(other, f) for f in fields)
            and dict(self.sizes) == dict(other.sizes)
            and canonical_json(self.graph_spec) == canonical_json(other.graph_spec)
        )


def _ordered_map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _with_context(label: str, fn: Callable):
    try:
        return fn()
    except ScmBenchError as e:
        try:
            wrapped = type(e)(f"{label}: {e}")
        except TypeError:
            raise e
        raise wrapped from e


def record_seed(seed: int, split_index: int, i: int) -> int:
    """Seed of the i-th record of a split.

    The top byte holds the split index, so seed ranges of different splits
    never overlap; the low 56 bits walk from a seed-derived offset.
    """
    base = int(np.random.SeedSequence(int(seed)).generate_state(1, np.uint64)[0]) & SEED_MASK
    return (split_index << SEED_BITS) | ((base + i) & SEED_MASK)


def example_id(dataset: str, seed: int, index: int) -> str:
    return hashlib.sha256(f"{dataset}:{seed}:{index}".encode()).hexdigest()[:16]


def generate_dataset(
    bundle: DgpBundle,
    sizes: Mapping[str, int],
    seed: int,
    renderer=None,
    jobs: int = 1,
) -> Dataset:
    """Sample and render the four splits."""
    renderer = renderer or DeterministicRenderer(bundle)
    g = bundle.graph
    unknown = set(sizes) - set(SPLITS)
    if unknown or any(int(v) < 0 for v in sizes.values()):
        raise ConfigError(f"sizes must be non-negative counts over {SPLITS}, got {dict(sizes)}")
    jobs_in = []
    index = 0
    for si, split in enumerate(SPLITS):
        for i in range(int(sizes.get(split, 0))):
            jobs_in.append((split, index, record_seed(seed, si, i)))
            index += 1

    def make(item):
        split, idx, rseed = item
        ex_id = example_id(bundle.name, seed, idx)

        def work():
            exo = sample_exogenous(g, rseed, bundle.persona_ids, bundle.template_ids)
            a = evaluate(g, exo)
            r = renderer.render(a, bundle.persona(exo.persona_id), bundle.template(exo.template_id))
            return Example(ex_id, split, idx, exo, a.values, r.text, r.prompt_hash)

        return _with_context(f"example {ex_id}", work)

    examples = _ordered_map(make, jobs_in, jobs)
    return Dataset(
        name=bundle.name,
        graph_spec=g.spec,
        seed=int(seed),
        sizes={s: int(sizes.get(s, 0)) for s in SPLITS},
        renderer_id=renderer.renderer_id,
        examples=examples,
    )


def applicable_changes(graph, factual: Mapping[str, int]) -> list[ConceptChange]:
    return [c for c in enumerate_changes(graph) if factual[c.concept] == c.from_code]


def select_changes(graph, factual: Mapping[str, int], n: int, rng: np.random.Generator,
                   strict: bool = False) -> list[ConceptChange]:
    """Uniform draw of ``n`` distinct applicable changes, in draw order."""
    options = applicable_changes(graph, factual)
    if len(options) < n:
        msg = f"only {len(options)} applicable changes, {n} requested"
        if strict:
            raise InsufficientChanges(msg)
        log.warning("%s; taking all", msg)
        n = len(options)
    picks = rng.choice(len(options), size=n, replace=False)
    return [options[int(i)] for i in picks]


def attach_counterfactuals(
    dataset: Dataset,
    bundle: DgpBundle,
    renderer=None,
    n_changes: int = 3,
    seed: int | None = None,
    jobs: int = 1,
) -> Dataset:
    """Add ``n_changes`` structural counterfactuals per interventional example."""
    renderer = renderer or DeterministicRenderer(bundle)
    g = bundle.graph
    cf_seed = dataset.seed if seed is None else int(seed)
    base = dataset.split("interventional")

    def make(ex: Example) -> list[InterventionalPair]:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cf_seed, ex.index])))
        changes = select_changes(g, ex.assignment, n_changes, rng)
        persona, template = bundle.persona(ex.exo.persona_id), bundle.template(ex.exo.template_id)
        out = []
        for ch in changes:
            def work():
                cf = counterfactual_assignment(g, ex.exo, ch)
                r = renderer.render(cf, persona, template)
                return InterventionalPair(ex.id, ch, cf.values, r.text, r.prompt_hash)

            out.append(_with_context(f"example {ex.id} change {ch}", work))
        return out

    dataset.pairs = list(chain.from_iterable(_ordered_map(make, base, jobs)))
    dataset.cf_seed = cf_seed
    dataset.n_changes = n_changes
    return dataset


def attach_endpoints(
    dataset: Dataset,
    bundle: DgpBundle,
    renderer=None,
    concepts: Iterable[str] | None = None,
    jobs: int = 1,
) -> Dataset:
    """Render every interventional example under do(C=c) for each value c of each concept.

    These are the counterfactuals to both endpoints that the empirical CaCE needs.
    """
    renderer = renderer or DeterministicRenderer(bundle)
    g = bundle.graph
    names = list(concepts) if concepts is not None else changeable_concepts(g)

    def make(ex: Example) -> list[EndpointText]:
        persona, template = bundle.persona(ex.exo.persona_id), bundle.template(ex.exo.template_id)
        out = []
        for c in names:
            for code in g.concept(c).codes:
                a = evaluate(g, ex.exo, {c: code})
                r = renderer.render(a, persona, template)
                out.append(EndpointText(ex.id, c, code, a.values, r.text, r.prompt_hash))
        return out

    dataset.endpoints = list(chain.from_iterable(_ordered_map(make, dataset.split("interventional"), jobs)))
    return dataset


# --- persistence


def _jsonl(records: Iterable[dict]) -> str:
    return "".join(canonical_json(r) + "\n" for r in records)


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_manifest(dataset: Dataset, files: Mapping[str, str]) -> dict:
    g = dataset.graph
    m = {
        "schema_version": SCHEMA_VERSION,
        "dataset": dataset.name,
        "graph_digest": g.digest,
        "graph": dataset.graph_spec,
        "renderer_id": dataset.renderer_id,
        "prng": PRNG_ID,
        "seed": dataset.seed,
        "cf_seed": dataset.cf_seed,
        "n_changes": dataset.n_changes,
        "sizes": dict(dataset.sizes),
        "counts": dataset.counts(),
        "files": {name: _sha(text) for name, text in sorted(files.items())},
    }
    m["digest"] = _sha(canonical_json(m))
    return m


def write_dataset(dataset: Dataset, directory: str | Path, overwrite: bool = False) -> dict:
    """Write the dataset files and return the manifest.

    An existing dataset with a different digest is never replaced unless
    ``overwrite`` is set; rewriting identical content is a no-op.
    """
    d = Path(directory)
    files = {
        "dataset.jsonl": _jsonl(e.to_json() for e in dataset.examples),
        "pairs.jsonl": _jsonl(p.to_json() for p in dataset.pairs),
        "endpoints.jsonl": _jsonl(e.to_json() for e in dataset.endpoints),
    }
    manifest = build_manifest(dataset, files)
    mpath = d / "manifest.json"
    if mpath.is_file() and not overwrite:
        try:
            old = json.loads(mpath.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            old = {}
        if old.get("digest") != manifest["digest"]:
            raise DatasetExists(f"{d} already holds a different dataset (digest {old.get('digest')})")
        return manifest
    d.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        atomic_write(d / name, text)
    atomic_write(mpath, json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    return manifest


def read_jsonl(path: str | Path) -> list[dict]:
    """Parse a JSONL file; any unreadable line raises CorruptLine with its 1-based number."""
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorruptLine(path, n, f"({e.msg})") from None
            if not isinstance(rec, dict):
                raise CorruptLine(path, n, "(not an object)")
            out.append(rec)
    return out


def _parse(path: Path, rows: list[dict], cls):
    out = []
    for n, row in enumerate(rows, start=1):
        try:
            out.append(cls.from_json(row))
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptLine(path, n, f"({type(e).__name__}: {e})") from None
    return out


def read_dataset(directory: str | Path, bundle: DgpBundle | None = None) -> Dataset:
    d = Path(directory)
    mpath = d / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorruptLine(mpath, e.lineno, f"({e.msg})") from None
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{mpath}: schema {manifest.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
    graph = validate_graph(manifest["graph"])
    if manifest.get("graph_digest") != graph.digest:
        raise GraphDigestMismatch(f"{mpath}: graph digest does not match the embedded graph")
    if bundle is not None and bundle.graph.digest != graph.digest:
        raise GraphDigestMismatch(f"{mpath}: dataset was generated from a different {bundle.name} graph")

    rows = {}
    for name in ("dataset.jsonl", "pairs.jsonl", "endpoints.jsonl"):
        p = d / name
        rows[name] = read_jsonl(p) if p.is_file() else []
    for name, expected in manifest.get("files", {}).items():
        p = d / name
        actual = _sha(p.read_text(encoding="utf-8")) if p.is_file() else None
        if actual != expected:
            raise FileDigestMismatch(f"{p}: content digest differs from manifest")

    return Dataset(
        name=manifest["dataset"],
        graph_spec=manifest["graph"],
        seed=int(manifest["seed"]),
        sizes=manifest["sizes"],
        renderer_id=manifest["renderer_id"],
        examples=_parse(d / "dataset.jsonl", rows["dataset.jsonl"], Example),
        pairs=_parse(d / "pairs.jsonl", rows["pairs.jsonl"], InterventionalPair),
        endpoints=_parse(d / "endpoints.jsonl", rows["endpoints.jsonl"], EndpointText),
        cf_seed=manifest.get("cf_seed"),
        n_changes=manifest.get("n_changes"),
    )


def load_manifest(directory: str | Path) -> dict:
    return json.loads((Path(directory) / "manifest.json").read_text(encoding="utf-8"))
