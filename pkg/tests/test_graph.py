import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossnet.errors import GraphError
from crossnet.graph import (
    CandidateGraph,
    build_candidate_graph,
    build_industry_graph,
    build_random_graph,
    canonical,
    cosine_similarity,
    load_industry_codes,
    read_edges,
)


def brute_force_topk(vectors: dict, K: int) -> set:
    """Reference top-K union graph using plain Python sorting."""
    edges = set()
    for a in vectors:
        scored = []
        for b in vectors:
            if b == a:
                continue
            u, v = vectors[a], vectors[b]
            sim = sum(x * y for x, y in zip(u, v)) / math.sqrt(sum(x * x for x in u) * sum(y * y for y in v))
            scored.append((-sim, b))
        for _, b in sorted(scored)[:K]:
            edges.add(tuple(sorted((a, b))))
    return edges


class TestCosine:
    @pytest.mark.parametrize(
        "u, v, expected",
        [((1, 0), (1, 0), 1.0), ((1, 0), (0, 1), 0.0), ((1, 1), (1, 0), 1 / math.sqrt(2))],
    )
    def test_examples(self, u, v, expected):
        assert cosine_similarity(u, v) == pytest.approx(expected, abs=1e-9)

    def test_hand_value(self):
        assert abs(cosine_similarity((1, 1), (1, 0)) - 0.70710678) < 1e-8

    def test_zero_vector(self):
        with pytest.raises(GraphError):
            cosine_similarity((0, 0), (1, 0))

    @settings(max_examples=50)
    @given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
    def test_bounded(self, u, v):
        if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
            return
        assert -1.0 <= cosine_similarity(u, v) <= 1.0


class TestCandidateGraph:
    def test_three_stocks_k1_against_brute_force(self):
        vectors = {"A": (1.0, 0.0), "B": (0.9, 0.3), "C": (0.0, 1.0)}
        g = build_candidate_graph(vectors, list(vectors), 1)
        # A->B, B->A, C->B: two edges
        assert set(g.edges) == brute_force_topk(vectors, 1) == {("A", "B"), ("B", "C")}
        assert len(g) in (2, 3)
        assert g.similarity[("A", "B")] == pytest.approx(cosine_similarity((1, 0), (0.9, 0.3)))

    def test_identical_embeddings_complete(self):
        vectors = {s: (1.0, 2.0, 3.0) for s in "ABC"}
        g = build_candidate_graph(vectors, list(vectors), 2)
        assert set(g.edges) == {("A", "B"), ("A", "C"), ("B", "C")}

    def test_ties_broken_by_id(self):
        vectors = {s: (1.0, 0.0) for s in "ABCD"}
        g = build_candidate_graph(vectors, list(vectors), 1)
        # every node picks the smallest other id
        assert set(g.edges) == {("A", "B"), ("A", "C"), ("A", "D")}

    def test_saturated_k_is_complete(self, rng):
        ids = [f"S{k}" for k in range(10)]
        vectors = dict(zip(ids, rng.standard_normal((10, 4))))
        g = build_candidate_graph(vectors, ids, 9)
        assert len(g) == 45

    def test_k_too_large(self, rng):
        with pytest.raises(GraphError):
            build_candidate_graph({"A": (1, 0), "B": (0, 1)}, ["A", "B"], 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 14), st.integers(1, 6), st.integers(0, 10_000))
    def test_matches_brute_force(self, n, K, seed):
        K = min(K, n - 1)
        rng = np.random.default_rng(seed)
        ids = [f"X{k:02d}" for k in range(n)]
        vectors = {s: tuple(rng.standard_normal(3)) for s in ids}
        g = build_candidate_graph(vectors, ids, K)
        assert set(g.edges) == brute_force_topk(vectors, K)
        assert len(g) <= n * K
        assert all(d >= K for d in g.degree().values())
        for i, j in g.edges:
            assert i < j

    @settings(max_examples=20, deadline=None)
    @given(st.integers(3, 12), st.integers(0, 10_000))
    def test_permutation_and_relabeling(self, n, seed):
        rng = np.random.default_rng(seed)
        ids = [f"X{k:02d}" for k in range(n)]
        mat = rng.standard_normal((n, 5))
        g = build_candidate_graph(dict(zip(ids, mat)), ids, 2)
        perm = rng.permutation(n)
        shuffled = build_candidate_graph({ids[p]: mat[p] for p in perm}, [ids[p] for p in perm], 2)
        assert shuffled == g
        rename = {s: f"Y{n - k:02d}" for k, s in enumerate(ids)}
        renamed = build_candidate_graph({rename[s]: v for s, v in zip(ids, mat)}, list(rename.values()), 2)
        assert set(renamed.edges) == {canonical(rename[i], rename[j]) for i, j in g.edges}

    def test_accepts_vintage(self, rng):
        from crossnet.panel import EmbeddingSet

        ids = ("A", "B", "C", "D")
        mat = rng.standard_normal((4, 3))
        emb = EmbeddingSet.from_arrays({2020: (ids, mat)})
        assert build_candidate_graph(emb.vintage(2020), ids, 1) == build_candidate_graph(dict(zip(ids, mat)), ids, 1)

    def test_invalid_graphs_rejected(self):
        with pytest.raises(GraphError):
            CandidateGraph(("A", "B"), (("B", "A"),), {("B", "A"): 1.0}, "semantic")
        with pytest.raises(GraphError):
            CandidateGraph(("A",), (("A", "A"),), {("A", "A"): 1.0}, "semantic")
        with pytest.raises(GraphError):
            CandidateGraph(("A", "B"), (("A", "B"), ("A", "B")), {("A", "B"): 1.0}, "semantic")

    def test_csv_round_trip(self, tmp_path, rng):
        ids = [f"S{k}" for k in range(6)]
        g = build_candidate_graph(dict(zip(ids, rng.standard_normal((6, 3)))), ids, 2)
        g.to_csv(tmp_path / "edges.csv")
        back = read_edges(tmp_path / "edges.csv", ids)
        assert back.edges == g.edges
        assert all(back.similarity[e] == g.similarity[e] for e in g.edges)


class TestRandomGraph:
    def test_same_seed_same_edges(self):
        ids = [f"S{k:02d}" for k in range(20)]
        assert build_random_graph(ids, 3, 11) == build_random_graph(ids, 3, 11)
        assert build_random_graph(ids, 3, (11, 0)) != build_random_graph(ids, 3, (11, 1))

    def test_forced_single_edge(self):
        assert build_random_graph(["A", "B"], 1, 0).edges == (("A", "B"),)

    def test_k_too_large(self):
        with pytest.raises(GraphError):
            build_random_graph(["A", "B"], 2, 0)

    def test_edge_count_monte_carlo(self):
        N, K = 30, 5
        ids = [f"S{k:02d}" for k in range(N)]
        counts = np.array([len(build_random_graph(ids, K, s)) for s in range(100)])
        # a pair is absent iff neither endpoint drew the other
        expected = math.comb(N, 2) * (1 - (1 - K / (N - 1)) ** 2)
        assert N * K / 2 <= counts.mean() <= N * K
        assert abs(counts.mean() - expected) < 1.5
        assert all(d >= K for d in build_random_graph(ids, K, 3).degree().values())


class TestIndustryGraph:
    def test_pair(self):
        g = build_industry_graph(["A", "B", "C"], {"A": 10, "B": 10, "C": 20})
        assert g.edges == (("A", "B"),)
        assert g.tag == "industry"

    def test_all_equal(self):
        assert len(build_industry_graph(list("ABCD"), dict.fromkeys("ABCD", 7))) == 6

    def test_group_sizes(self):
        codes = {"A": 1, "B": 1, "C": 1, "D": 2, "E": 2, "F": 3}
        g = build_industry_graph(list(codes), codes)
        assert len(g) == sum(math.comb(n, 2) for n in (3, 2, 1)) == 4

    def test_missing_code_lists_stock(self):
        with pytest.raises(GraphError, match="B"):
            build_industry_graph(["A", "B"], {"A": 1})

    @settings(max_examples=30)
    @given(st.dictionaries(st.sampled_from(list("ABCDEFGHIJ")), st.integers(0, 3), min_size=1))
    def test_exactly_equal_code_pairs(self, codes):
        g = build_industry_graph(list(codes), codes)
        brute = {(a, b) for a, b in combinations(sorted(codes), 2) if codes[a] == codes[b]}
        assert set(g.edges) == brute

    def test_load_codes_two_digits(self, tmp_path):
        p = tmp_path / "sic.csv"
        p.write_text("stock,code\nA,3571\nB,357\nC,3674\n", encoding="utf-8")
        assert load_industry_codes(p) == {"A": "35", "B": "03", "C": "36"}
