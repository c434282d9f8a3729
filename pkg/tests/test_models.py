import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgprocess import models as M
from cgprocess.exceptions import InvalidArgument
from cgprocess.rng import stream


def is_tree(model):
    return model.n_edges == model.n - 1 and M.is_connected(model)


# complete graph -------------------------------------------------------------------


def test_complete_graph_sizes():
    assert M.complete_graph(1).n_edges == 0
    g = M.complete_graph(3)
    assert g.n_edges == 3 and np.all(g.rate == 1)
    g = M.complete_graph(5, 2.0)
    assert g.n_edges == 10 and np.all(g.rate == 2.0)
    assert g.all_pairs_positive()


def test_complete_graph_rejects_empty():
    with pytest.raises(InvalidArgument):
        M.complete_graph(0)
    with pytest.raises(InvalidArgument):
        M.complete_graph(3, 0.0)


# edge lists and validation ---------------------------------------------------------


def test_edge_list_examples():
    g = M.from_edge_list(2, [(0, 1)])
    assert g.edges() == [(0, 1, 1.0)]
    path = M.from_edge_list(3, [(0, 1), (1, 2)])
    assert path.rate_of(0, 2) == 0.0 and path.rate_of(2, 1) == 1.0


@pytest.mark.parametrize("edges", [[(0, 1), (1, 0)], [(1, 1)], [(0, 4)], [(-1, 0)]])
def test_edge_list_errors(edges):
    with pytest.raises(InvalidArgument):
        M.from_edge_list(4, edges)


def test_model_is_immutable_and_sorted():
    g = M.MeetingModel.from_arrays(4, [3, 2, 1], [0, 0, 0], [1.0, 2.0, 3.0])
    assert [(a, b) for a, b, _ in g.edges()] == [(0, 1), (0, 2), (0, 3)]
    assert g.rate_of(3, 0) == 1.0
    with pytest.raises(ValueError):
        g.rate[0] = 5.0


def test_model_rejects_bad_rates():
    for rate in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(InvalidArgument):
            M.MeetingModel.from_arrays(2, [0], [1], rate)


def test_text_roundtrip(tmp_path):
    g = M.torus_power_law(3, 2, 3.0)
    text = g.to_text()
    assert text.splitlines()[0] == "n 9"
    again = M.MeetingModel.from_text(text)
    assert again == g
    path = tmp_path / "m.txt"
    g.save(path)
    assert M.MeetingModel.load(path) == g
    assert path.read_text() == text


def test_scaled_and_degrees():
    g = M.complete_graph(4).scaled(3.0)
    assert np.all(g.rate == 3.0)
    assert list(g.degrees()) == [3, 3, 3, 3]
    assert sorted(g.neighbors()[0]) == [1, 2, 3]


# ring of near-cliques --------------------------------------------------------------


def test_near_cliques_small():
    g = M.ring_of_near_cliques(3, 2)
    assert g.n == 6
    # each block is K_3 minus one edge plus one ring edge per endpoint: degree r - 1
    assert set(g.degrees().tolist()) == {2}
    assert M.is_connected(g)


def test_near_cliques_edge_count():
    g = M.ring_of_near_cliques(4, 3)
    assert g.n == 12
    assert g.n_edges == 12 * 3 // 2
    assert M.is_connected(g)


@pytest.mark.parametrize("r,k", [(3, 1), (2, 5)])
def test_near_cliques_errors(r, k):
    with pytest.raises(InvalidArgument):
        M.ring_of_near_cliques(r, k)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 9), st.integers(2, 8))
def test_near_cliques_regular_and_connected(r, k):
    g = M.ring_of_near_cliques(r, k)
    assert np.all(g.degrees() == r - 1)
    assert M.is_connected(g)
    # the removed edge inside each block is exactly the pair joined to the ring
    for b in range(k):
        assert g.rate_of(b * r, b * r + 1) == 0.0
        assert g.rate_of(b * r + 1, ((b + 1) % k) * r) == 1.0


# Erdos-Renyi -----------------------------------------------------------------------


def test_er_examples():
    assert M.erdos_renyi(10, 0.0, stream(1)).n_edges == 0
    g = M.erdos_renyi(2, 2.0, stream(1))
    assert g.edges() == [(0, 1, 1.0)]
    with pytest.raises(InvalidArgument):
        M.erdos_renyi(10, 11.0, stream(1))


def test_er_edge_count_large():
    n, c = 10_000, 1.0
    g = M.erdos_renyi(n, c, stream(3))
    pairs = n * (n - 1) // 2
    mean = pairs * c / n
    sd = math.sqrt(pairs * (c / n) * (1 - c / n))
    assert abs(g.n_edges - mean) < 4 * sd
    assert abs(mean - 4999.5) < 1e-9


def test_er_edge_count_over_seeds():
    n, c = 30, 3.0
    counts = np.array([M.erdos_renyi(n, c, stream(s)).n_edges for s in range(400)])
    pairs = n * (n - 1) // 2
    mean, var = pairs * c / n, pairs * (c / n) * (1 - c / n)
    assert abs(counts.mean() - mean) < 4 * math.sqrt(var / counts.size)


def test_er_pairs_uniform():
    # each pair is present with probability c/n
    n, c, reps = 6, 3.0, 4000
    hits = np.zeros((n, n))
    for s in range(reps):
        g = M.erdos_renyi(n, c, stream(s, 1))
        hits[g.i, g.j] += 1
    p = c / n
    iu = np.triu_indices(n, 1)
    freq = hits[iu] / reps
    assert np.all(np.abs(freq - p) < 4 * math.sqrt(p * (1 - p) / reps))


def test_er_is_seed_deterministic():
    assert M.erdos_renyi(500, 2.0, stream(9)) == M.erdos_renyi(500, 2.0, stream(9))


# torus --------------------------------------------------------------------------------


def test_torus_examples():
    g = M.torus_power_law(2, 1, 2.0)
    assert g.edges() == [(0, 1, 1.0)]
    g = M.torus_power_law(4, 1, 2.0)
    assert g.rate_of(0, 2) == pytest.approx(0.25)
    assert g.rate_of(0, 3) == pytest.approx(1.0)
    g = M.torus_power_law(3, 2, 3.0)
    assert g.rate_of(0, 4) == pytest.approx(2 ** -1.5)
    # alpha below the dimension is allowed
    assert M.torus_power_law(4, 2, 1.0).n_edges == 16 * 15 // 2
    with pytest.raises(InvalidArgument):
        M.torus_power_law(4, 1, 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 5), st.integers(1, 2), st.floats(0.5, 4.0), st.data())
def test_torus_translation_invariance(m, d, alpha, data):
    g = M.torus_power_law(m, d, alpha)
    n = m**d
    a = data.draw(st.integers(0, n - 1))
    b = data.draw(st.integers(0, n - 1))
    shift = data.draw(st.integers(0, n - 1))

    def coords(v):
        return np.array(np.unravel_index(v, (m,) * d))

    def index(c):
        return int(np.ravel_multi_index(tuple(c % m), (m,) * d))

    s = coords(shift)
    a2, b2 = index(coords(a) + s), index(coords(b) + s)
    if a != b:
        assert g.rate_of(a, b) == pytest.approx(g.rate_of(a2, b2))


# trees --------------------------------------------------------------------------------


def test_dary_tree_sizes():
    g = M.dary_tree(2, 0)
    assert g.n == 1 and g.n_edges == 0
    g = M.dary_tree(2, 2)
    assert (g.n, g.n_edges) == (7, 6)
    assert M.dary_tree(3, 3).n == 40
    with pytest.raises(InvalidArgument):
        M.dary_tree(10, 8)


def test_regular_tree_sizes():
    path = M.regular_tree(2, 1)
    assert path.n == 3 and sorted(path.degrees().tolist()) == [1, 1, 2]
    star = M.regular_tree(3, 1)
    assert star.n == 4 and star.degrees()[0] == 3
    assert M.regular_tree(3, 2).n == 10


def test_trees_are_breadth_first_with_root_zero():
    g = M.dary_tree(2, 2)
    children = M.rooted_children(g, 0)
    assert children[0] == [1, 2]
    assert children[1] == [3, 4] and children[2] == [5, 6]


def test_rooted_children_rejects_cycles():
    with pytest.raises(InvalidArgument):
        M.rooted_children(M.complete_graph(3), 0)


def test_gw_degenerate_laws():
    rng = stream(2)
    for _ in range(5):
        assert M.galton_watson_tree(M.GwOffspring([1.0]), 5, rng).n == 1
    g = M.galton_watson_tree(M.GwOffspring.degenerate(2), 2, rng)
    assert g == M.dary_tree(2, 2)


def test_gw_poisson_mean_size():
    off = M.GwOffspring.poisson(1.0)
    sizes = np.array([M.galton_watson_tree(off, 10, stream(5, k)).n for k in range(3000)])
    # E size = sum_{k<=10} c^k = 11 at c = 1
    assert abs(sizes.mean() - 11.0) < 4 * sizes.std(ddof=1) / math.sqrt(sizes.size)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 3.0), st.integers(0, 6), st.integers(0, 2**32))
def test_gw_trees_are_trees(c, depth, seed):
    g = M.galton_watson_tree(M.GwOffspring.poisson(c), depth, stream(seed))
    assert is_tree(g)


def test_gw_offspring_validation():
    with pytest.raises(InvalidArgument):
        M.GwOffspring([0.5, 0.4])
    with pytest.raises(InvalidArgument):
        M.GwOffspring([1.2, -0.2])
    pmf = np.array([0.25, 0.75])
    off = M.GwOffspring(pmf)
    pmf[0] = 0.0  # the caller's array stays writable and is copied
    assert off.pmf[0] == 0.25


def test_poisson_truncation_tail():
    off = M.GwOffspring.poisson(1.0)
    assert off.mean() == pytest.approx(1.0, abs=1e-12)
    assert off.pgf(1.0) == pytest.approx(1.0)
    assert off.pgf(0.5) == pytest.approx(math.exp(-0.5), abs=1e-12)


# random regular graphs ------------------------------------------------------------------


def test_rrg_small_cases():
    g = M.random_regular_graph(4, 3, stream(1))
    assert g == M.complete_graph(4)
    g = M.random_regular_graph(10, 3, stream(2))
    assert np.all(g.degrees() == 3)
    for s in range(20):
        assert M.random_regular_graph(6, 3, stream(s)).n_edges == 9
    with pytest.raises(InvalidArgument):
        M.random_regular_graph(5, 3, stream(1))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(10, 60), st.integers(0, 2**32))
def test_rrg_is_simple_and_regular(r, n, seed):
    if n * r % 2:
        n += 1
    g = M.random_regular_graph(n, r, stream(seed))
    assert np.all(g.degrees() == r)
    assert len(set(zip(g.i.tolist(), g.j.tolist()))) == g.n_edges


def test_rrg_near_uniform_on_small_case():
    # K_4 minus a perfect matching: three 2-regular labelled graphs on 4 vertices (all 4-cycles)
    counts = {}
    for s in range(1500):
        g = M.random_regular_graph(4, 2, stream(s, 7))
        key = tuple(zip(g.i.tolist(), g.j.tolist()))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 3
    assert all(abs(v / 1500 - 1 / 3) < 0.05 for v in counts.values())


# connectivity ---------------------------------------------------------------------------


def test_is_connected_examples():
    assert M.is_connected(M.complete_graph(5))
    assert not M.is_connected(M.from_edge_list(3, [(0, 1)]))
    assert not M.is_connected(M.erdos_renyi(100, 0.0, stream(1)))
    assert M.is_connected(M.complete_graph(1))
