"""Stage orchestration: predictions, reference effects, explanations, evaluation.

Every stage reads its inputs from files in a run directory and writes its
outputs back there::

    <run>/dataset/            generate
    <run>/predictions.jsonl   predict   (+ predictions.json)
    <run>/explanations.jsonl  explain   (+ explanations.json)
    <run>/report/             evaluate, true-effects
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .adapters import FileBackedModel, text_digest, write_store
from .errors import UpstreamError
from .explainers import CandidatePool, ExplanationVector, MethodSpec, Query, build_pool, explain_items
from .metrics import (
    aggregate_local,
    cace_empirical,
    error_distance,
    global_importance,
    global_of,
    icace,
    sensitivity,
)
from .pipeline import Dataset, load_manifest, read_jsonl
from .render import atomic_write
from .report import sha256_file, write_tables
from .scm import ConceptChange, canonical_json

log = logging.getLogger(__name__)

PREDICTIONS = "predictions.jsonl"
EXPLANATIONS = "explanations.jsonl"
REFERENCE = "reference"


def dataset_texts(dataset: Dataset) -> list[str]:
    """Every text a stage may ask the explained model about, deduplicated, digest order."""
    texts = {e.text for e in dataset.examples}
    texts.update(p.cf_text for p in dataset.pairs)
    texts.update(e.text for e in dataset.endpoints)
    return sorted(texts, key=text_digest)


def write_predictions(run_dir: str | Path, dataset: Dataset, model, dataset_digest: str, jobs: int = 1) -> dict:
    texts = dataset_texts(dataset)
    if hasattr(model, "predict_many"):
        preds = model.predict_many(texts)
    else:
        preds = [model.predict(t) for t in texts]
    rows = [{"text_digest": text_digest(t), "probs": list(p.probs)} for t, p in zip(texts, preds)]
    d = Path(run_dir)
    write_store(d / PREDICTIONS, rows)
    info = {"model_id": model.model_id, "dataset_digest": dataset_digest, "n_texts": len(rows),
            "n_classes": dataset.graph.concept(dataset.graph.outcome).n_values,
            "file_digest": sha256_file(d / PREDICTIONS)}
    atomic_write(d / "predictions.json", json.dumps(info, indent=2, sort_keys=True) + "\n")
    return info


def load_predictions(run_dir: str | Path, dataset_digest: str | None = None) -> FileBackedModel:
    d = Path(run_dir)
    if not (d / "predictions.json").is_file():
        raise UpstreamError(f"{d}: no predictions; run the predict stage first")
    info = json.loads((d / "predictions.json").read_text(encoding="utf-8"))
    if dataset_digest is not None and info.get("dataset_digest") != dataset_digest:
        raise UpstreamError(f"{d}: predictions were made for a different dataset")
    return FileBackedModel(d / PREDICTIONS, int(info["n_classes"]), model_id=info["model_id"])


def queries(dataset: Dataset, model) -> dict[str, Query]:
    return {e.id: Query(e.id, e.text, model.predict(e.text).array) for e in dataset.split("interventional")}


def reference_icaces(dataset: Dataset, model, qs: Mapping[str, Query] | None = None) -> dict[tuple[str, str], np.ndarray]:
    """ICaCE per (example id, change key) from the stored counterfactual texts."""
    qs = qs or queries(dataset, model)
    return {(p.example_id, p.change.key()): icace(qs[p.example_id].probs, model.predict(p.cf_text).array)
            for p in dataset.pairs}


def pool_from_split(dataset: Dataset, model, split: str = "method_train", jobs: int = 1) -> CandidatePool:
    items = [(e.id, e.text, e.assignment) for e in dataset.split(split)]
    return build_pool(dataset.graph, items, model, jobs)


def run_explanations(
    dataset: Dataset, model, methods: Sequence[MethodSpec], pool: CandidatePool | None = None, jobs: int = 1,
) -> tuple[list[ExplanationVector], dict[str, int]]:
    """One explanation per (method, pair), grouped by method in the given order, then pair order.

    Items a matching method cannot serve (no candidate carries the target
    value) are left out and counted per method in the second return value.
    """
    qs = queries(dataset, model)
    pool = pool if pool is not None else pool_from_split(dataset, model, jobs=jobs)
    items = [(qs[p.example_id], p.change) for p in dataset.pairs]
    out, skipped = [], {}
    for m in methods:
        log.info("explaining %d items with %s", len(items), m.name)
        got = explain_items(m, pool, items, jobs, skip_empty=True)
        skipped[m.name] = sum(e is None for e in got)
        if skipped[m.name]:
            log.warning("%s: %d of %d items have no eligible candidate", m.name, skipped[m.name], len(items))
        out.extend(e for e in got if e is not None)
    return out, skipped


def write_explanations(run_dir: str | Path, expls: Sequence[ExplanationVector], info: Mapping) -> None:
    d = Path(run_dir)
    text = "".join(canonical_json(e.to_json()) + "\n" for e in expls)
    atomic_write(d / EXPLANATIONS, text)
    meta = dict(info)
    meta["file_digest"] = sha256_file(d / EXPLANATIONS)
    atomic_write(d / "explanations.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_explanations(run_dir: str | Path) -> list[ExplanationVector]:
    p = Path(run_dir) / EXPLANATIONS
    if not p.is_file():
        return []
    return [ExplanationVector.from_json(r) for r in read_jsonl(p)]


def _changes_by_concept(keys) -> dict[str, list[str]]:
    out: dict[str, list[str]] = defaultdict(list)
    for k in keys:
        out[ConceptChange.parse(k).concept].append(k)
    return out


def endpoint_caces(dataset: Dataset, model, change_keys: Sequence[str]) -> dict[str, np.ndarray]:
    """Empirical CaCE of each change over the interventional examples, from endpoint texts."""
    base = dataset.split("interventional")
    out = {}
    for key in change_keys:
        ch = ConceptChange.parse(key)
        to_c = [model.predict(dataset.endpoint(e.id, ch.concept, ch.from_code).text).array for e in base]
        to_c2 = [model.predict(dataset.endpoint(e.id, ch.concept, ch.to_code).text).array for e in base]
        out[key] = cace_empirical(to_c, to_c2)
    return out


def evaluate_run(
    dataset: Dataset, model, expls: Sequence[ExplanationVector], dataset_digest: str = "",
) -> dict[str, list[dict]]:
    """All report tables for one dataset and one explained model."""
    qs = queries(dataset, model)
    refs = reference_icaces(dataset, model, qs)
    change_sets = dataset.change_sets()
    keys = sorted(change_sets)
    by_concept = _changes_by_concept(keys)
    base = {"dataset": dataset.name, "model_id": model.model_id}

    tables: dict[str, list[dict]] = {n: [] for n in ("local.csv", "local_items.csv", "global.csv",
                                                    "global_importance.csv", "sensitivity.csv")}
    for concept, ks in by_concept.items():
        items = [refs[(x, k)] for k in ks for x in change_sets[k]]
        tables["sensitivity.csv"].append({**base, "concept": concept, "sensitivity": sensitivity(items),
                                          "n_items": len(items)})

    gold = None
    if dataset.endpoints:
        cace = endpoint_caces(dataset, model, keys)
        gold = global_importance({c: [cace[k] for k in ks] for c, ks in by_concept.items()})
        for c in sorted(gold):
            tables["global_importance.csv"].append({**base, "method": REFERENCE, "concept": c, "importance": gold[c]})

    methods: dict[str, dict[tuple[str, str], np.ndarray]] = {}
    for e in expls:
        methods.setdefault(e.method_id, {})[(e.example_id, e.change.key())] = e.array
    for method, store in methods.items():
        # a method is scored on the pairs it explained; coverage says how many that is
        covered = {k: [x for x in xs if (x, k) in store] for k, xs in change_sets.items()}
        covered = {k: xs for k, xs in covered.items() if xs}
        m_concepts = _changes_by_concept(sorted(covered))
        scores = aggregate_local(covered, refs, store)
        tables["local.csv"].append({**base, "method": method, "ed_bar": scores.ed_bar, "of_bar": scores.of_bar,
                                    "coverage": len(store) / len(dataset.pairs),
                                    "n_changes": scores.n_changes, "n_of_pairs": scores.n_of_pairs,
                                    "n_empty_pairs": scores.n_empty_pairs, "sign_ties": scores.ties})
        for p in dataset.pairs:
            k = (p.example_id, p.change.key())
            if k not in store:
                continue
            ed = error_distance(refs[k], store[k])
            tables["local_items.csv"].append({**base, "method": method, "example_id": p.example_id, "change": k[1],
                                              "ed_cosine": ed.cosine, "ed_l2": ed.l2, "ed_norm_diff": ed.norm_diff,
                                              "ed_mean": ed.mean})
        est = {c: [np.mean([store[(x, k)] for x in covered[k]], axis=0) for k in ks] for c, ks in m_concepts.items()}
        imp = global_importance(est)
        for c in sorted(imp):
            tables["global_importance.csv"].append({**base, "method": method, "concept": c, "importance": imp[c]})
        if gold is not None and len(imp) > 1:
            # concepts with no explained change drop out of both rankings
            tables["global.csv"].append({**base, "method": method, "n_concepts": len(imp),
                                         "global_of": global_of({c: gold[c] for c in imp}, imp)})
    return tables


def write_report(run_dir: str | Path, tables: Mapping[str, Sequence[Mapping]], provenance: Mapping) -> dict:
    return write_tables(Path(run_dir) / "report", tables, provenance)


def dataset_digest(dataset_dir: str | Path) -> str:
    return load_manifest(dataset_dir)["digest"]
