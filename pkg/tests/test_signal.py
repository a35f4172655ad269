import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from crossnet.errors import CrossnetError, DegenerateSpread
from crossnet.signal import (
    PairModel,
    aggregate_signals,
    edge_weights,
    fit_pair_models,
    normalized_prices,
    pair_stats,
    softmax_terms,
    zscore,
)


def refined(edges, weights=None):
    return SimpleNamespace(edges=tuple(edges), weights=weights or dict.fromkeys(edges, 1.0))


def model(edge, mu=0.0, sigma=1.0, dist=0.0):
    return PairModel(edge, mu, sigma, dist)


class TestNormalizedPrices:
    @pytest.mark.parametrize(
        "returns, expected",
        [([0, 0, 0], [1, 1, 1]), ([0.1, -0.1], [1.1, 0.99]), ([0.05], [1.05])],
    )
    def test_examples(self, returns, expected):
        assert_allclose(normalized_prices(returns), expected, rtol=0, atol=1e-15)

    def test_bad_return(self):
        with pytest.raises(CrossnetError):
            normalized_prices([0.1, -1.0])

    def test_missing_return(self):
        with pytest.raises(CrossnetError):
            normalized_prices([0.1, np.nan])

    def test_columnwise(self):
        p = normalized_prices([[0.1, 0.0], [0.1, 0.5]])
        assert_allclose(p, [[1.1, 1.0], [1.21, 1.5]])


class TestPairStats:
    def test_identical_paths(self):
        m = pair_stats([1.0, 1.1, 1.2], [1.0, 1.1, 1.2])
        assert (m.mu, m.sigma, m.dist) == (0.0, 0.0, 0.0)

    def test_hand_example(self):
        m = pair_stats([1.0, 1.0], [1.1, 0.9], ("A", "B"))
        assert m.mu == pytest.approx(0.0, abs=1e-15)
        assert m.sigma == pytest.approx(0.1414, abs=1e-4)
        assert m.sigma == pytest.approx(math.sqrt(0.02), rel=1e-12)
        assert m.dist == pytest.approx(0.02, rel=1e-12)
        assert m.edge == ("A", "B")

    def test_constant_spread(self):
        c = 0.3
        p_j = np.linspace(1.0, 1.4, 5)
        m = pair_stats(p_j + c, p_j)
        assert m.mu == pytest.approx(c)
        assert m.sigma == pytest.approx(0.0, abs=1e-14)
        assert m.dist == pytest.approx(5 * c * c)

    def test_too_short(self):
        with pytest.raises(CrossnetError):
            pair_stats([1.0], [1.0])

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(0.5, 2.0), st.floats(0.5, 2.0)), min_size=2, max_size=30))
    def test_against_statistics_module(self, pts):
        import statistics

        p_i, p_j = zip(*pts)
        m = pair_stats(p_i, p_j)
        s = [a - b for a, b in pts]
        assert m.mu == pytest.approx(statistics.fmean(s), abs=1e-12)
        assert m.sigma == pytest.approx(statistics.stdev(s), abs=1e-12)
        assert m.dist == pytest.approx(sum(x * x for x in s), abs=1e-12)
        assert m.sigma >= 0 and m.dist >= 0


class TestZscore:
    @pytest.mark.parametrize(
        "mu, sigma, spread, expected",
        [(0.3, 0.2, 0.3, 0.0), (0.0, 1.0, 2.0, 2.0), (0.5, 0.25, 0.0, -2.0)],
    )
    def test_examples(self, mu, sigma, spread, expected):
        assert zscore(PairModel(("A", "B"), mu, sigma, 0.0), spread) == pytest.approx(expected, abs=1e-15)

    def test_below_floor(self):
        with pytest.raises(DegenerateSpread):
            zscore(PairModel(("A", "B"), 0.0, 1e-9, 0.0), 1.0)

    def test_vectorized(self):
        assert_allclose(zscore(PairModel(("A", "B"), 1.0, 2.0, 0.0), [1.0, 3.0, -1.0]), [0.0, 1.0, -1.0])

    def test_training_z_standardized(self, rng):
        for _ in range(20):
            p = normalized_prices(0.01 * rng.standard_normal((50, 2)))
            m = pair_stats(p[:, 0], p[:, 1])
            z = zscore(m, p[:, 0] - p[:, 1])
            assert abs(z.mean()) < 1e-10
            assert abs(z.std(ddof=1) - 1) < 1e-10


class TestEdgeWeights:
    @pytest.mark.parametrize("n", [1, 2, 5])
    def test_equal_distances(self, n):
        inc = [(model(("A", f"B{k}"), dist=0.7), 1.0) for k in range(n)]
        assert_allclose(edge_weights("A", inc), np.ones(n), rtol=1e-15)

    def test_two_distances(self):
        inc = [(model(("A", "B"), dist=0.0), 1.0), (model(("A", "C"), dist=math.log(3)), 1.0)]
        assert_allclose(edge_weights("A", inc), [1.5, 0.5], atol=1e-12)

    def test_substitute_half(self):
        inc = [(model(("A", "B"), dist=0.2), 0.5), (model(("A", "C"), dist=0.2), 1.0)]
        assert edge_weights("A", inc)[0] == pytest.approx(0.5, abs=1e-15)

    def test_equal_mode_is_omega(self):
        inc = [(model(("A", "B"), dist=0.0), 0.5), (model(("A", "C"), dist=9.0), 1.0)]
        assert_array_equal(edge_weights("A", inc, "equal"), [0.5, 1.0])

    def test_empty(self):
        with pytest.raises(CrossnetError):
            edge_weights("A", [])

    def test_large_distances_do_not_underflow(self):
        w = softmax_terms([5000.0, 5001.0])
        assert_allclose(w, [1 / (1 + math.exp(-1)), math.exp(-1) / (1 + math.exp(-1))], rtol=1e-12)

    @settings(max_examples=100)
    @given(
        st.lists(st.floats(0, 50), min_size=1, max_size=20),
        st.floats(-100, 100),
    )
    def test_softmax_identities(self, dist, shift):
        terms = softmax_terms(dist)
        assert abs(terms.sum() - 1) < 1e-12
        assert_allclose(softmax_terms(np.array(dist) + shift), terms, atol=1e-12, rtol=0)
        inc = [(model(("A", f"X{k}"), dist=d), 1.0) for k, d in enumerate(dist)]
        assert abs(edge_weights("A", inc).sum() - len(dist)) < 1e-10


class TestAggregate:
    def test_single_edge(self):
        paths = np.array([[2.0, 1.0]])
        sig = aggregate_signals(refined([("A", "B")]), {("A", "B"): model(("A", "B"))}, paths, ["A", "B"])
        assert_array_equal(sig.values, [[-1.0, 1.0]])
        assert_array_equal(sig.degree, [1, 1])

    def test_zero_z(self, rng):
        edges = [("A", "B"), ("A", "C"), ("B", "C")]
        paths = np.ones((4, 3))
        models = {e: model(e, dist=rng.uniform()) for e in edges}
        assert_array_equal(aggregate_signals(refined(edges), models, paths, "ABC").values, np.zeros((4, 3)))

    def test_path_graph_hand_computation(self):
        # z_AB = 1, z_BC = 2; B's softmax over d = (0, ln 3) is (3/4, 1/4), times n_B = 2
        edges = [("A", "B"), ("B", "C")]
        models = {("A", "B"): model(("A", "B"), dist=0.0), ("B", "C"): model(("B", "C"), dist=math.log(3))}
        paths = np.array([[4.0, 3.0, 1.0]])
        sig = aggregate_signals(refined(edges), models, paths, ["A", "B", "C"])
        assert_allclose(sig.values[0], [-1.0, 1.0 * 1.5 - 2.0 * 0.5, 2.0], atol=1e-12)

    def test_isolated_stock_flagged(self):
        paths = np.array([[2.0, 1.0, 5.0]])
        sig = aggregate_signals(refined([("A", "B")]), {("A", "B"): model(("A", "B"))}, paths, ["A", "B", "C"])
        assert_array_equal(sig.isolated, [False, False, True])
        assert sig.column("C")[0] == 0.0

    def test_missing_model(self):
        with pytest.raises(CrossnetError):
            aggregate_signals(refined([("A", "B")]), {}, np.ones((1, 2)), ["A", "B"])

    def test_two_stock_antisymmetry(self, rng):
        r = 0.01 * rng.standard_normal((80, 2))
        p = normalized_prices(r)
        m = pair_stats(p[:60, 0], p[:60, 1], ("A", "B"))
        sig = aggregate_signals(refined([("A", "B")]), {("A", "B"): m}, p[59:], ["A", "B"])
        assert_array_equal(sig.values[:, 0], -sig.values[:, 1])

    def test_csv_dump(self, tmp_path):
        sig = aggregate_signals(refined([("A", "B")]), {("A", "B"): model(("A", "B"))}, np.array([[2.0, 1.0]]), ["A", "B"], ["2020-01-02"])
        sig.to_csv(tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().splitlines() == ["date,stock,S,degree", "2020-01-02,A,-1.0,1", "2020-01-02,B,1.0,1"]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(3, 9))
    def test_removing_edge_only_affects_endpoints(self, seed, n):
        rng = np.random.default_rng(seed)
        stocks = [f"S{k}" for k in range(n)]
        edges = sorted({tuple(sorted(rng.choice(stocks, 2, replace=False))) for _ in range(2 * n)})
        models = {e: model(e, mu=rng.normal(), sigma=rng.uniform(0.1, 2), dist=rng.uniform(0, 3)) for e in edges}
        paths = rng.uniform(0.5, 1.5, size=(5, n))
        full = aggregate_signals(refined(edges), models, paths, stocks)
        drop = edges[rng.integers(len(edges))]
        less = aggregate_signals(refined([e for e in edges if e != drop]), models, paths, stocks)
        untouched = [k for k, s in enumerate(stocks) if s not in drop]
        assert_array_equal(full.values[:, untouched], less.values[:, untouched])


class TestFitPairModels:
    def test_degenerate_edges_skipped(self):
        prices = np.array([[1.0, 1.0, 1.0], [1.1, 1.1, 0.9], [1.2, 1.2, 1.0]])
        models, skipped = fit_pair_models([("A", "B"), ("A", "C")], prices, ["A", "B", "C"])
        assert skipped == [("A", "B")]
        assert list(models) == [("A", "C")]
