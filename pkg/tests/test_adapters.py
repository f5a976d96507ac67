import json
import math

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scmbench.adapters import (
    BagOfMarkersEmbedder,
    FileBackedConceptPredictor,
    FileBackedEmbedder,
    FileBackedModel,
    GoldConceptPredictor,
    OracleModel,
    RemoteConceptPredictor,
    RemoteEmbedder,
    RemoteModel,
    as_simplex,
    softmax,
    text_digest,
    write_store,
)
from scmbench.errors import EndpointUnreachable, MalformedResponse, UnknownText
from scmbench.render import render_deterministic
from scmbench.scm import ConceptChange, counterfactual_assignment, evaluate

from test_scm import zero_noise_record


def rendered(bundle, values, i=0):
    return render_deterministic(bundle, values, bundle.persona_pool[i], bundle.template_pool[i]).text


def test_softmax_closed_form():
    # e^2 / (e^2 + 2) and 1 / (e^2 + 2)
    e2 = math.exp(2)
    assert softmax([0, 2, 0]) == pytest.approx([1 / (e2 + 2), e2 / (e2 + 2), 1 / (e2 + 2)], abs=1e-15)
    assert softmax([0, 2, 0]).round(4).tolist() == [0.1065, 0.787, 0.1065]


def test_oracle_prediction(violence):
    m = OracleModel(violence.graph, kappa=2.0)
    values = {"G": 1, "A": 1, "R": 2, "T": 1, "L": 1, "D": 2, "S": 1, "Y": 1}
    p = m.predict(rendered(violence, values))
    assert np.allclose(p.probs, softmax([0, 2, 0]), atol=0, rtol=0)
    big = OracleModel(violence.graph, kappa=60.0).predict(rendered(violence, values))
    assert np.allclose(big.probs, [0, 1, 0], atol=1e-20)


def test_oracle_weights(cv):
    m = OracleModel(cv.graph, kappa=1.0, weights={"E": (0.5, 2)})
    values = {c.name: 0 for c in cv.graph.concepts}
    values.update(E=3, Q=0)
    assert np.allclose(m.probs_for(values), softmax([1.0, 0.0, 1.5]))
    assert "E:0.5@2" in m.model_id


def test_oracle_analytic_icace(violence):
    g = violence.graph
    exo = zero_noise_record(g, {"G": 1, "A": 1, "R": 2})
    fact = evaluate(g, exo)
    cf = counterfactual_assignment(g, exo, ConceptChange("G", 1, 0))
    m = OracleModel(g)
    got = m.predict(rendered(violence, cf.values)).array - m.predict(rendered(violence, fact.values)).array
    assert np.array_equal(got, m.analytic_icace(fact.values, cf.values))
    # Y moves 1 -> 0: softmax(2,0,0) - softmax(0,2,0)
    assert np.allclose(got, softmax([2, 0, 0]) - softmax([0, 2, 0]), atol=1e-15)


def test_simplex_rules(caplog):
    assert as_simplex([0.5, 0.5]).tolist() == [0.5, 0.5]
    fixed = as_simplex([0.5, 0.5005])
    assert abs(fixed.sum() - 1) < 1e-12
    assert "renormalising" in caplog.text
    with pytest.raises(MalformedResponse):
        as_simplex([0.5, 0.6])
    with pytest.raises(MalformedResponse):
        as_simplex([1.2, -0.2])
    with pytest.raises(MalformedResponse):
        as_simplex([0.5, 0.5], n=3)
    with pytest.raises(MalformedResponse):
        as_simplex([float("nan"), 1.0])


@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=6))
def test_simplex_accepts_normalised(xs):
    p = np.array(xs) / np.sum(xs)
    out = as_simplex(p)
    assert abs(out.sum() - 1) <= 1e-6 and np.all(out >= 0)


def test_file_backed_model(tmp_path):
    path = tmp_path / "predictions.jsonl"
    write_store(path, [{"text_digest": text_digest("hello"), "probs": [0.7, 0.2, 0.1]},
                       {"text_digest": text_digest("hard"), "label": 2}])
    m = FileBackedModel(path, 3)
    assert m.predict("hello").probs == (0.7, 0.2, 0.1)
    assert m.predict("hard").probs == (0.0, 0.0, 1.0)
    with pytest.raises(UnknownText):
        m.predict("other")


def test_remote_model_batches_and_caches():
    calls = []

    def handler(request):
        texts = json.loads(request.content)["texts"]
        calls.append(texts)
        return httpx.Response(200, json={"probs": [[0.25, 0.75] if t.startswith("a") else [1.0, 0.0] for t in texts]})

    m = RemoteModel("http://m", 2, batch_size=2, transport=httpx.MockTransport(handler))
    out = m.predict_many(["a1", "b1", "a2"])
    assert [p.probs for p in out] == [(0.25, 0.75), (1.0, 0.0), (0.25, 0.75)]
    assert calls == [["a1", "b1"], ["a2"]]
    assert m.predict("b1").probs == (1.0, 0.0)  # cached
    assert len(calls) == 2


def test_remote_model_errors(violence):
    bad = RemoteModel("http://m", 2, transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"probs": []})))
    with pytest.raises(MalformedResponse):
        bad.predict("x")

    def timeout(request):
        raise httpx.ReadTimeout("slow")

    slow = RemoteConceptPredictor("http://m", violence.graph, max_retries=2, transport=httpx.MockTransport(timeout),
                                  sleep=lambda s: None)
    with pytest.raises(EndpointUnreachable):
        slow.predict_concepts("x")


def test_gold_concept_predictor(violence):
    values = {"G": 1, "A": 1, "R": 2, "T": 1, "L": 1, "D": 2, "S": 1, "Y": 1}
    pred = GoldConceptPredictor(violence.graph).predict_concepts(rendered(violence, values))
    assert {c: int(np.argmax(v)) for c, v in pred.items()} == values
    assert all(v.sum() == 1 and v.max() == 1 for v in pred.values())


def test_file_backed_concepts_missing_concept(tmp_path, violence):
    path = tmp_path / "concepts.jsonl"
    concepts = {c.name: [1.0] + [0.0] * (c.n_values - 1) for c in violence.graph.concepts}
    del concepts["R"]
    write_store(path, [{"text_digest": text_digest("t"), "concepts": concepts}])
    with pytest.raises(MalformedResponse, match="'R'"):
        FileBackedConceptPredictor(path, violence.graph).predict_concepts("t")


def test_remote_concepts(violence):
    g = violence.graph
    payload = {c.name: [1.0] + [0.0] * (c.n_values - 1) for c in g.concepts}
    t = httpx.MockTransport(lambda r: httpx.Response(200, json={"concepts": [payload]}))
    got = RemoteConceptPredictor("http://m", g, transport=t).predict_concepts("x")
    assert set(got) == set(g.names)


def test_bag_of_markers_blocks(violence):
    g = violence.graph
    exo = zero_noise_record(g, {"G": 1, "A": 1, "R": 2})
    fact = evaluate(g, exo)
    cf = counterfactual_assignment(g, exo, ConceptChange("G", 1, 0))
    emb = BagOfMarkersEmbedder(g)
    a, b = emb.embed(rendered(violence, fact.values)), emb.embed(rendered(violence, cf.values, 2))
    assert len(a) == emb.dim == 2 + 3 + 4 + 3 + 3 + 4 + 4 + 3
    differing = {c for c, sl in emb.blocks().items() if not np.array_equal(a[sl], b[sl])}
    assert differing == {"G", "D", "Y"}
    assert np.array_equal(emb.embed(rendered(violence, fact.values)), a)


def test_file_backed_embedder_dimension(tmp_path):
    path = tmp_path / "embeddings.jsonl"
    write_store(path, [{"text_digest": text_digest("a"), "vec": [1.0, 0.0]},
                       {"text_digest": text_digest("b"), "vec": [1.0, 0.0, 2.0]}])
    e = FileBackedEmbedder(path)
    assert e.embed("a").tolist() == [1.0, 0.0]
    assert e.embed("a").tolist() == [1.0, 0.0]
    with pytest.raises(MalformedResponse):
        e.embed("b")


def test_remote_embedder_dimension():
    vectors = iter([[[1.0, 2.0]], [[1.0]]])
    t = httpx.MockTransport(lambda r: httpx.Response(200, json={"vectors": next(vectors)}))
    e = RemoteEmbedder("http://m", transport=t)
    assert e.embed("a").tolist() == [1.0, 2.0]
    with pytest.raises(MalformedResponse):
        e.embed("b")
