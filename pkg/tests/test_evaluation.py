import numpy as np
import pytest

from scmbench.adapters import OracleModel
from scmbench.evaluation import (
    endpoint_caces,
    evaluate_run,
    load_predictions,
    queries,
    reference_icaces,
    write_predictions,
)
from scmbench.explainers import ExplanationVector
from scmbench.metrics import interventional_distribution
from scmbench.pipeline import attach_counterfactuals, attach_endpoints, generate_dataset


def test_endpoint_cace_tracks_interventional_shift(violence):
    # with a near-hard oracle, f(text) ~ onehot(Y), so the empirical CaCE of
    # G:0->1 estimates P(Y | do(G=1)) - P(Y | do(G=0))
    ds = generate_dataset(violence, {"interventional": 10_000}, seed=17)
    attach_endpoints(ds, violence, concepts=["G"])
    model = OracleModel(violence.graph, kappa=60)
    cace = endpoint_caces(ds, model, ["G:0->1"])["G:0->1"]
    g = violence.graph
    shift = interventional_distribution(g, "G", 1, 400_000, seed=5) - interventional_distribution(g, "G", 0, 400_000, seed=6)
    assert np.all(np.sign(cace) == np.sign(shift))
    assert cace == pytest.approx(shift, abs=0.03)


@pytest.fixture(scope="module")
def small_run(cv, tmp_path_factory):
    ds = generate_dataset(cv, {"method_train": 30, "interventional": 20}, seed=2)
    attach_counterfactuals(ds, cv, n_changes=3)
    attach_endpoints(ds, cv)
    d = tmp_path_factory.mktemp("eval")
    write_predictions(d, ds, OracleModel(cv.graph), "digest")
    return ds, d


def test_file_backed_predictions_round_trip_exactly(cv, small_run):
    ds, d = small_run
    oracle = OracleModel(cv.graph)
    stored = load_predictions(d, "digest")
    a, b = reference_icaces(ds, oracle), reference_icaces(ds, stored)
    assert all(a[k].tolist() == b[k].tolist() for k in a)
    assert stored.model_id == oracle.model_id


def test_reference_explanations_score_perfectly(small_run):
    ds, d = small_run
    model = load_predictions(d)
    refs = reference_icaces(ds, model)
    expls = [ExplanationVector(p.example_id, p.change, "ref", tuple(refs[(p.example_id, p.change.key())].tolist()))
             for p in ds.pairs]
    tables = evaluate_run(ds, model, expls)
    row = tables["local.csv"][0]
    assert row["ed_bar"] == 0 and row["coverage"] == 1
    # explaining with the references reproduces per-change CaCE only up to sampling; sanity bounds
    assert 0 <= tables["global.csv"][0]["global_of"] <= 1
    gold = {r["concept"] for r in tables["global_importance.csv"] if r["method"] == "reference"}
    assert gold == {r["concept"] for r in tables["sensitivity.csv"]}


def test_queries_cover_interventional_split(small_run):
    ds, d = small_run
    qs = queries(ds, load_predictions(d))
    assert set(qs) == {e.id for e in ds.split("interventional")}
