import math

import pytest

from cgprocess import experiments as X
from cgprocess import models as M
from cgprocess import stats as S
from cgprocess.exceptions import InvalidArgument
from cgprocess.rng import stream


SMALL = {
    "kingman": ({"n": 20}, {}, 300),
    "winner-uniformity": ({}, {}, 3000),
    "pair-moment": ({"n": 10}, {"times": [0.5]}, 2000),
    "construction-equivalence": ({}, {}, 3000),
    "er-density": ({"n": 500}, {}, 4),
    "rtree-density": ({"n": 400}, {"h": 0.01}, 3),
    "near-clique-bounds": ({"k": 6}, {}, 200),
    "pgw-geometric": ({"depth": 6}, {}, 500),
    "torus-exponent": ({"m": 16}, {"times": [0.5, 5.0, 50.0]}, 30),
    "exchangeability": ({}, {}, 5000),
}


def test_every_registered_experiment_has_a_smoke_case():
    assert set(SMALL) == set(X.EXPERIMENTS)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_small_runs(name):
    model, params, reps = SMALL[name]
    out, resolved = X.run_experiment(name, model, params, seed=3, replicates=reps)
    assert resolved["experiment"] == name and resolved["replicates"] == reps
    assert resolved["model"]["family"] == X.EXPERIMENTS[name].model["family"]
    assert isinstance(out.summary, dict) and out.summary
    again, _ = X.run_experiment(name, model, params, seed=3, replicates=reps, threads=2)
    assert again.summary == out.summary


def test_kingman_oracle_only_in_kingman_case():
    out, _ = X.run_experiment("kingman", {"n": 10}, seed=1, replicates=200)
    assert out.summary["oracle"] == pytest.approx(1.8)
    out, _ = X.run_experiment("kingman", {"n": 10}, seed=1, replicates=200, clock="uniform")
    assert "oracle" not in out.summary
    out, _ = X.run_experiment("kingman", {"n": 10, "rate": 2.0}, seed=1, replicates=200)
    assert "oracle" not in out.summary


def test_linked_parameters_follow_the_model():
    _, resolved = X.run_experiment("near-clique-bounds", {"r": 4, "k": 5}, seed=1, replicates=50)
    assert resolved["params"]["r"] == 4
    _, resolved = X.run_experiment("er-density", {"n": 200, "c": "2.5"}, seed=1, replicates=2)
    assert resolved["params"]["c"] == 2.5 and resolved["model"]["c"] == 2.5


def test_family_override_drops_default_model_keys():
    _, resolved = X.run_experiment("kingman", {"family": "near-cliques", "r": 3, "k": 3}, seed=1, replicates=20)
    assert resolved["model"] == {"family": "near-cliques", "r": 3, "k": 3}


@pytest.mark.parametrize("call", [
    lambda: X.run_experiment("nope"),
    lambda: X.run_experiment("kingman", params={"bogus": 1}),
    lambda: X.run_experiment("kingman", {"bogus": 1}),
    lambda: X.run_experiment("kingman", {"n": "ten"}),
    lambda: X.run_experiment("kingman", replicates=1),
    lambda: X.run_experiment("kingman", {"family": "er", "n": 10, "c": 1.0}, replicates=5),
    lambda: X.run_experiment("kingman", {"family": "near-cliques", "r": 3}, replicates=5),
])
def test_bad_requests_raise(call):
    with pytest.raises(InvalidArgument):
        call()


def test_build_model_families():
    assert X.build_model("complete", {"n": "4"}) == M.complete_graph(4)
    sampler = X.build_model("rrg", {"n": 10, "r": 3})
    assert sampler(stream(1)).n == 10


def test_block_codes():
    assert X.encode_blocks(((1,), (2,))) == 1 + 2 * 3
    assert len(X.block_assignments((2, 2))) == 6
    assert len(X.block_assignments((3, 1))) == 4
    assert len(X.block_assignments((4,))) == 1


def test_stratified_uniformity():
    codes = X.block_assignments((2, 2))
    even = S.Histogram({c: 50 for c in codes}, 300)
    stat, dof, p = X.stratified_uniformity({(2, 2, 0, 0): even, (4, 0, 0, 0): S.Histogram({1: 7}, 7)})
    assert stat == 0.0 and dof == 5 and p == pytest.approx(1.0)
    skew = S.Histogram({codes[0]: 250, codes[1]: 50}, 300)
    assert X.stratified_uniformity({(2, 2, 0, 0): skew})[2] < 1e-6
    with pytest.raises(InvalidArgument):
        X.stratified_uniformity({(4, 0, 0, 0): S.Histogram({1: 7}, 7)})


def test_exchangeability_groups_match_pattern():
    groups = X.exchangeability(M.complete_graph(4), 0.4, (2, 2, 0, 0), 4000, 2)
    assert groups and all(sorted(v, reverse=True) == [2, 2, 0, 0] for v in groups)
    with pytest.raises(InvalidArgument):
        X.exchangeability(M.complete_graph(4), 0.4, (2, 1), 10, 2)


def test_construction_histograms_share_support():
    h = X.construction_equivalence(M.complete_graph(3), 0.5, 3000, 5)
    assert set(h) == {"direct", "augmented", "token"}
    assert all(v.total == 3000 for v in h.values())
    assert set(h["direct"].bins) == set(h["token"].bins)
    assert not math.isnan(S.chi_square_homogeneity(h["direct"], h["token"])[1])
