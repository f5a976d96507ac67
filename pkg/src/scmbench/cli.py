"""Command-line entry point: ``scmbench <stage> [options]``.

Stages communicate only through files in the run directory (``--out``), so
each one can be rerun on its own. Exit codes: 0 success, 2 configuration
error, 3 upstream-file error, 4 remote-service error, 5 integrity error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .adapters import (
    BagOfMarkersEmbedder,
    FileBackedConceptPredictor,
    FileBackedModel,
    FileBackedEmbedder,
    GoldConceptPredictor,
    OracleModel,
    RemoteConceptPredictor,
    RemoteEmbedder,
    RemoteModel,
)
from .config import RunConfig, parse_list, parse_sizes
from .dgp import BUILTIN, load_builtin
from .errors import ConfigError, ScmBenchError, UpstreamError
from .evaluation import (
    dataset_digest,
    evaluate_run,
    load_predictions,
    read_explanations,
    run_explanations,
    write_explanations,
    write_predictions,
    write_report,
)
from .explainers import STRATEGIES, LlmEditor, ScmEditor, make_method
from .metrics import TRUE_EFFECT_MODES, true_effects
from .pipeline import attach_counterfactuals, attach_endpoints, generate_dataset, load_manifest, read_dataset, write_dataset
from .render import ChatClient, DiskCache, make_renderer
from .report import read_table, write_true_effects

log = logging.getLogger("scmbench")


def _split_spec(spec: str) -> tuple[str, str]:
    kind, _, arg = spec.partition(":")
    return kind, arg


def make_model(spec: str, graph):
    kind, arg = _split_spec(spec)
    n = graph.concept(graph.outcome).n_values
    if kind == "oracle":
        return OracleModel(graph, kappa=float(arg) if arg else 2.0)
    if kind == "file" and arg:
        return FileBackedModel(arg, n)
    if kind == "remote" and arg:
        return RemoteModel(arg, n)
    raise ConfigError(f"model must be oracle[:kappa], file:<path> or remote:<url>, got {spec!r}")


def make_embedder(spec: str, graph):
    kind, arg = _split_spec(spec)
    if kind == "markers":
        return BagOfMarkersEmbedder(graph)
    if kind == "file" and arg:
        return FileBackedEmbedder(arg)
    if kind == "remote" and arg:
        return RemoteEmbedder(arg)
    raise ConfigError(f"embedder must be markers, file:<path> or remote:<url>, got {spec!r}")


def make_predictor(spec: str, graph):
    kind, arg = _split_spec(spec)
    if kind == "gold":
        return GoldConceptPredictor(graph)
    if kind == "file" and arg:
        return FileBackedConceptPredictor(arg, graph)
    if kind == "remote" and arg:
        return RemoteConceptPredictor(arg, graph)
    raise ConfigError(f"concept predictor must be gold, file:<path> or remote:<url>, got {spec!r}")


def _client(cfg: RunConfig) -> ChatClient:
    return ChatClient(cfg.llm_url, cfg.llm_model)


def _dataset_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out) / "dataset"


def _load(cfg: RunConfig):
    ddir = _dataset_dir(cfg)
    if not (ddir / "manifest.json").is_file():
        raise UpstreamError(f"{ddir}: no dataset; run the generate stage first")
    name = load_manifest(ddir)["dataset"]
    bundle = load_builtin(name, cfg.asset_root)
    return bundle, read_dataset(ddir, bundle), dataset_digest(ddir)


def _save_config(cfg: RunConfig, stage: str) -> None:
    cfg.save(Path(cfg.out) / "config" / f"{stage}.json")


def cmd_generate(cfg: RunConfig, overwrite: bool = False) -> int:
    if cfg.dataset is None:
        raise ConfigError("generate needs --dataset")
    bundle = load_builtin(cfg.dataset, cfg.asset_root)
    client = _client(cfg) if cfg.renderer == "llm" else None
    cache = DiskCache(cfg.cache_dir) if cfg.cache_dir else None
    renderer = make_renderer(cfg.renderer, bundle, client, cache)
    log.info("generating %s with sizes %s", cfg.dataset, cfg.sizes)
    ds = generate_dataset(bundle, cfg.sizes, cfg.seed, renderer, jobs=cfg.jobs)
    attach_counterfactuals(ds, bundle, renderer, n_changes=cfg.n_changes, seed=cfg.cf_seed, jobs=cfg.jobs)
    if cfg.endpoints:
        attach_endpoints(ds, bundle, renderer, jobs=cfg.jobs)
    manifest = write_dataset(ds, _dataset_dir(cfg), overwrite=overwrite)
    _save_config(cfg, "generate")
    c = manifest["counts"]
    print(f"{cfg.dataset}: {sum(c['examples'].values())} examples, {c['change_instances']} pairs, "
          f"{c['endpoints']} endpoint texts, digest {manifest['digest'][:16]}")
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    bundle, ds, digest = _load(cfg)
    model = make_model(cfg.model, ds.graph)
    info = write_predictions(cfg.out, ds, model, digest, jobs=cfg.jobs)
    _save_config(cfg, "predict")
    print(f"{info['n_texts']} predictions from {info['model_id']}")
    return 0


def cmd_explain(cfg: RunConfig) -> int:
    if not cfg.methods:
        raise ConfigError("explain needs --methods")
    bundle, ds, digest = _load(cfg)
    model = load_predictions(cfg.out, digest)
    g = ds.graph
    needs = set(cfg.methods)
    embedder = make_embedder(cfg.embedder, g) if needs & {"ft_match", "pt_match", "st_match"} else None
    predictor = make_predictor(cfg.concept_predictor, g) if needs & {"approx", "convecs"} else None
    editor = None
    if "cfgen" in needs:
        editor = ScmEditor(bundle, ds.examples) if cfg.editor == "scm" else LlmEditor(_client(cfg))
    cache = DiskCache(cfg.cache_dir) if cfg.cache_dir else None
    methods = [make_method(m, k=cfg.k, seed=cfg.method_seed, embedder=embedder, predictor=predictor, bundle=bundle,
                           editor=editor, model=model, strategy=cfg.strategy, cache=cache) for m in cfg.methods]
    expls, skipped = run_explanations(ds, model, methods, jobs=cfg.jobs)
    write_explanations(cfg.out, expls, {
        "skipped_items": skipped,
        "dataset_digest": digest,
        "model_id": model.model_id,
        "methods": {m.name: m.providers for m in methods},
        "k": cfg.k,
        "method_seed": cfg.method_seed,
    })
    _save_config(cfg, "explain")
    print(f"{len(expls)} explanations from {len(methods)} methods")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    bundle, ds, digest = _load(cfg)
    model = load_predictions(cfg.out, digest)
    expls = read_explanations(cfg.out)
    if cfg.methods:
        keep = set(cfg.methods)
        expls = [e for e in expls if e.method_id in keep or e.method_id.split(":")[0] in keep]
    tables = evaluate_run(ds, model, expls, digest)
    cfg_json = {k: v for k, v in cfg.to_json().items() if k != "out"}
    manifest = write_report(cfg.out, tables, {
        "dataset": ds.name,
        "dataset_digest": digest,
        "model_id": model.model_id,
        "methods": sorted({e.method_id for e in expls}),
        "of_normaliser": "ordered change pairs with a non-empty example intersection",
        "config": cfg_json,
    })
    for row in read_table(Path(cfg.out) / "report" / "local.csv"):
        print(f"{row['method']}: ED {row['ed_bar']}  OF {row['of_bar'] or 'n/a'}")
    print(f"report digest {manifest['digest'][:16]}")
    return 0


def cmd_true_effects(cfg: RunConfig) -> int:
    if cfg.dataset is None:
        raise ConfigError("true-effects needs --dataset")
    bundle = load_builtin(cfg.dataset, cfg.asset_root)
    g = bundle.graph
    effects = true_effects(g, n_samples=cfg.samples, seed=cfg.seed, mode=cfg.te_mode)
    rows = [{"dataset": g.name, "concept": c, "true_effect": v, "identifiable": v is not None, "mode": cfg.te_mode,
             "n_samples": cfg.samples, "seed": cfg.seed} for c, v in effects.items()]
    write_true_effects(Path(cfg.out) / "report", rows, {"dataset": g.name, "graph_digest": g.digest,
                                                        "mode": cfg.te_mode, "n_samples": cfg.samples,
                                                        "seed": cfg.seed})
    for c, v in effects.items():
        label = g.concept(c).label
        print(f"{label:<24} {'not identifiable' if v is None else f'{v:.3f}'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scmbench", description="Causal concept-explanation benchmark")
    p.add_argument("--version", action="version", version=f"scmbench {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", required=True, help="run directory")
        sp.add_argument("--asset-root", help="directory overriding the bundled assets")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="store_true")

    def llm(sp):
        sp.add_argument("--llm-url", help="OpenAI-compatible base URL")
        sp.add_argument("--llm-model")
        sp.add_argument("--cache-dir", help="response cache directory")

    g = sub.add_parser("generate", help="sample, render and store a dataset")
    common(g)
    llm(g)
    g.add_argument("--dataset", required=True, choices=BUILTIN)
    g.add_argument("--sizes", default="2000,500,500,300", help="model_train,model_test,method_train,interventional")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cf-seed", type=int)
    g.add_argument("--n-changes", type=int, default=3)
    g.add_argument("--renderer", default="deterministic", choices=("deterministic", "llm"))
    g.add_argument("--no-endpoints", action="store_true", help="skip do(C=c) texts for every concept value")
    g.add_argument("--overwrite", action="store_true")

    pr = sub.add_parser("predict", help="run the explained model over every stored text")
    common(pr)
    pr.add_argument("--model", default="oracle", help="oracle[:kappa], file:<predictions.jsonl> or remote:<url>")

    ex = sub.add_parser("explain", help="run explanation methods over the interventional pairs")
    common(ex)
    llm(ex)
    ex.add_argument("--methods", "--method", dest="methods", required=True,
                    help="comma list of ft_match, pt_match, st_match, approx, convecs, random_match, cfgen")
    ex.add_argument("--k", type=int, default=3)
    ex.add_argument("--method-seed", type=int, default=0)
    ex.add_argument("--embedder", default="markers", help="markers, file:<path> or remote:<url>")
    ex.add_argument("--concept-predictor", default="gold", help="gold, file:<path> or remote:<url>")
    ex.add_argument("--strategy", default="mediators_confounders", choices=STRATEGIES)
    ex.add_argument("--editor", default="scm", choices=("scm", "llm"))

    ev = sub.add_parser("evaluate", help="score explanations and write the report")
    common(ev)
    ev.add_argument("--methods", help="restrict to these methods")

    te = sub.add_parser("true-effects", help="Monte-Carlo ground-truth effects on the outcome")
    common(te)
    te.add_argument("--dataset", required=True, choices=BUILTIN)
    te.add_argument("--samples", type=int, default=1_000_000)
    te.add_argument("--seed", type=int, default=0)
    te.add_argument("--mode", default="individual", choices=TRUE_EFFECT_MODES)
    return p


def config_from_args(a: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(out=a.out, asset_root=a.asset_root, jobs=a.jobs)
    for name in ("dataset", "seed", "cf_seed", "n_changes", "renderer", "llm_url", "llm_model", "cache_dir", "model",
                 "k", "method_seed", "embedder", "concept_predictor", "strategy", "editor", "samples"):
        if hasattr(a, name):
            setattr(cfg, name, getattr(a, name))
    if hasattr(a, "sizes"):
        cfg.sizes = parse_sizes(a.sizes)
    if hasattr(a, "no_endpoints"):
        cfg.endpoints = not a.no_endpoints
    if hasattr(a, "mode"):
        cfg.te_mode = a.mode
    if getattr(a, "methods", None):
        cfg.methods = parse_list(a.methods)
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "generate":
            return cmd_generate(cfg, overwrite=args.overwrite)
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "explain":
            return cmd_explain(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_true_effects(cfg)
    except ScmBenchError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
