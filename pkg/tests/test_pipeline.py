import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scmbench.errors import (
    ConfigError,
    CorruptLine,
    DatasetExists,
    FileDigestMismatch,
    GraphDigestMismatch,
    InsufficientChanges,
    MissingEndpointCounterfactual,
    SchemaVersionMismatch,
)
from scmbench.pipeline import (
    SPLITS,
    applicable_changes,
    attach_counterfactuals,
    attach_endpoints,
    generate_dataset,
    read_dataset,
    record_seed,
    select_changes,
    write_dataset,
)
from scmbench.render import parse_markers
from scmbench.scm import ConceptChange, _rng, counterfactual_assignment, evaluate

SIZES = {"model_train": 40, "model_test": 10, "method_train": 20, "interventional": 15}


@pytest.fixture(scope="module")
def small(violence):
    ds = generate_dataset(violence, SIZES, seed=7)
    attach_counterfactuals(ds, violence, n_changes=3)
    attach_endpoints(ds, violence)
    return ds


def test_counts_and_ids(small, violence):
    assert len(small.examples) == 85
    assert [len(small.split(s)) for s in SPLITS] == [40, 10, 20, 15]
    assert len({e.id for e in small.examples}) == 85
    again = generate_dataset(violence, SIZES, seed=7)
    assert [e.id for e in again.examples] == [e.id for e in small.examples]
    assert again.examples == small.examples
    other = generate_dataset(violence, SIZES, seed=8)
    assert other.examples[0].text != small.examples[0].text or other.examples[0].id != small.examples[0].id


def test_full_scale_counts(violence):
    ds = generate_dataset(violence, {"model_train": 1500, "model_test": 300, "method_train": 500,
                                     "interventional": 400}, seed=1)
    assert len(ds.examples) == 2700


def test_empty_dataset(tmp_path, violence):
    ds = generate_dataset(violence, {s: 0 for s in SPLITS}, seed=1)
    attach_counterfactuals(ds, violence)
    m = write_dataset(ds, tmp_path / "d")
    assert m["counts"]["change_instances"] == 0
    assert read_dataset(tmp_path / "d") == ds


def test_bad_sizes(violence):
    with pytest.raises(ConfigError):
        generate_dataset(violence, {"model_train": -1}, seed=0)
    with pytest.raises(ConfigError):
        generate_dataset(violence, {"train": 3}, seed=0)


def test_splits_disjoint_by_seed(small):
    seeds = Counter(e.exo.seed for e in small.examples)
    assert max(seeds.values()) == 1
    by_split = {s: {e.exo.seed >> 56 for e in small.split(s)} for s in SPLITS}
    assert by_split == {s: {i} for i, s in enumerate(SPLITS)}
    assert record_seed(7, 0, 2**56) != record_seed(7, 1, 0)


def test_assignments_replay_and_render(small, violence):
    for e in small.examples:
        assert evaluate(violence.graph, e.exo).values == e.assignment
        assert parse_markers(violence.graph, e.text) == e.assignment


def test_pairs_valid(small, violence):
    by_id = small.by_id
    assert len(small.pairs) == 3 * 15
    for p in small.pairs:
        ex = by_id[p.example_id]
        assert ex.split == "interventional"
        assert p.change.from_code == ex.assignment[p.change.concept]
        assert counterfactual_assignment(violence.graph, ex.exo, p.change).values == p.cf_assignment
        assert parse_markers(violence.graph, p.cf_text) == p.cf_assignment
    per_example = Counter(p.example_id for p in small.pairs)
    assert set(per_example.values()) == {3}
    for ex_id in per_example:
        keys = [(p.change.concept, p.change.to_code) for p in small.pairs if p.example_id == ex_id]
        assert len(set(keys)) == 3


def test_change_selection_deterministic(small, violence):
    ds = generate_dataset(violence, SIZES, seed=7)
    attach_counterfactuals(ds, violence, n_changes=3)
    assert ds.pairs == small.pairs
    attach_counterfactuals(ds, violence, n_changes=3, seed=99)
    assert ds.pairs != small.pairs


def test_gender_change_from_factual(violence):
    changes = applicable_changes(violence.graph, {"G": 1, "A": 1, "R": 2, "T": 1, "L": 1, "D": 2, "S": 1, "Y": 1})
    assert [c for c in changes if c.concept == "G"] == [ConceptChange("G", 1, 0)]
    # 1 + 2 + 3 + 2 + 2 + 3 + 3 changes, outcome excluded
    assert len(changes) == 16


def test_insufficient_changes(violence):
    factual = {"G": 1, "A": 1, "R": 2, "T": 1, "L": 1, "D": 2, "S": 1, "Y": 1}
    got = select_changes(violence.graph, factual, 40, _rng(0))
    assert len(got) == 16
    with pytest.raises(InsufficientChanges):
        select_changes(violence.graph, factual, 40, _rng(0), strict=True)


def test_uniform_change_selection(disease):
    factual = {"Y": 0, "D": 1, "L": 1, "N": 0, "P": 0, "F": 0, "W": 0, "H": 1}
    options = applicable_changes(disease.graph, factual)
    rng = _rng(3)
    counts = Counter()
    for _ in range(6000):
        counts.update(c.key() for c in select_changes(disease.graph, factual, 1, rng))
    # 16 options, each about 375 times; 4 sigma band
    assert len(counts) == len(options) == 16
    assert all(abs(c - 375) < 4 * (375 * 15 / 16) ** 0.5 for c in counts.values())


def test_change_set_bookkeeping(small):
    sets = small.change_sets()
    brute = {}
    for p in small.pairs:
        brute.setdefault(p.change.key(), set()).add(p.example_id)
    assert {k: set(v) for k, v in sets.items()} == brute
    for (a, b), inter in small.intersections().items():
        assert inter == {x for x in brute[a] if x in brute[b]}


def test_endpoints(small, violence):
    ex = small.split("interventional")[0]
    for code in range(4):
        ep = small.endpoint(ex.id, "D", code)
        assert ep.assignment == evaluate(violence.graph, ex.exo, {"D": code}).values
    fact = small.endpoint(ex.id, "G", ex.assignment["G"])
    assert fact.text == ex.text
    with pytest.raises(MissingEndpointCounterfactual):
        small.endpoint(ex.id, "Y", 0)


def test_round_trip(tmp_path, small, violence):
    m = write_dataset(small, tmp_path / "d")
    back = read_dataset(tmp_path / "d", violence)
    assert back == small
    assert m["counts"]["change_instances"] == 45
    assert m["prng"].startswith("numpy.random.PCG64")
    # identical rewrite is a no-op, a different dataset is refused
    assert write_dataset(small, tmp_path / "d")["digest"] == m["digest"]
    other = generate_dataset(violence, SIZES, seed=8)
    with pytest.raises(DatasetExists):
        write_dataset(other, tmp_path / "d")


def test_byte_identical_rewrites(tmp_path, violence):
    for run in ("a", "b"):
        ds = generate_dataset(violence, SIZES, seed=3, jobs=4 if run == "b" else 1)
        attach_counterfactuals(ds, violence, jobs=3 if run == "b" else 1)
        write_dataset(ds, tmp_path / run)
    for name in ("manifest.json", "dataset.jsonl", "pairs.jsonl", "endpoints.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_integrity_errors(tmp_path, small):
    d = tmp_path / "d"
    write_dataset(small, d)
    mpath = d / "manifest.json"
    m = json.loads(mpath.read_text())

    m2 = dict(m, graph_digest="0" * 64)
    mpath.write_text(json.dumps(m2))
    with pytest.raises(GraphDigestMismatch):
        read_dataset(d)

    mpath.write_text(json.dumps(dict(m, schema_version="other/9")))
    with pytest.raises(SchemaVersionMismatch):
        read_dataset(d)

    mpath.write_text(json.dumps(m))
    data = (d / "pairs.jsonl").read_text()
    (d / "pairs.jsonl").write_text(data[:-20])
    with pytest.raises(CorruptLine) as info:
        read_dataset(d)
    assert info.value.line_number == 45

    (d / "pairs.jsonl").write_text(data.replace('"cf_text":"', '"cf_text":"x', 1))
    with pytest.raises(FileDigestMismatch):
        read_dataset(d)


def test_bundle_graph_mismatch(tmp_path, small, cv):
    write_dataset(small, tmp_path / "d")
    with pytest.raises(GraphDigestMismatch):
        read_dataset(tmp_path / "d", cv)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(1, 5))
def test_disease_pairs_distinct(disease, seed, n):
    ds = generate_dataset(disease, {"interventional": 3}, seed=seed)
    attach_counterfactuals(ds, disease, n_changes=n)
    for ex in ds.examples:
        ps = [p for p in ds.pairs if p.example_id == ex.id]
        assert len(ps) == n
        assert len({(p.change.concept, p.change.to_code) for p in ps}) == n
        assert all(p.change.to_code != ex.assignment[p.change.concept] for p in ps)
