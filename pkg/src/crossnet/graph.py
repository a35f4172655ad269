"""Candidate stock graphs: semantic top-K, random and industry baselines.

Edges are stored as canonical pairs ``(i, j)`` with ``i < j`` by stock id;
that orientation also fixes the sign of the spread downstream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import GraphError, LoadError

TAGS = ("semantic", "random", "industry")

Edge = tuple[str, str]


def canonical(a: str, b: str) -> Edge:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True, eq=False)
class CandidateGraph:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    similarity: Mapping[Edge, float]
    tag: str
    K: int | None = None

    def __post_init__(self):
        if self.tag not in TAGS:
            raise GraphError(f"unknown graph tag {self.tag!r}")
        nodes = set(self.nodes)
        for i, j in self.edges:
            if i == j:
                raise GraphError(f"self-loop on {i}")
            if not i < j:
                raise GraphError(f"edge ({i}, {j}) not in canonical order")
            if i not in nodes or j not in nodes:
                raise GraphError(f"edge ({i}, {j}) references unknown node")
        if len(set(self.edges)) != len(self.edges):
            raise GraphError("duplicate edge")

    def __len__(self) -> int:
        return len(self.edges)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CandidateGraph):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and self.tag == other.tag
            and self.K == other.K
            and all(_same(self.similarity[e], other.similarity[e]) for e in self.edges)
        )

    def degree(self) -> dict[str, int]:
        deg = dict.fromkeys(self.nodes, 0)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def to_csv(self, path: str | Path) -> None:
        """Write ``edges.csv``: ``stock_i, stock_j, similarity, tag``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stock_i", "stock_j", "similarity", "tag"])
            for e in self.edges:
                s = self.similarity[e]
                w.writerow([e[0], e[1], "" if math.isnan(s) else repr(s), self.tag])


def _same(a: float, b: float) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


def _make(nodes, edge_set, similarity, tag, K) -> CandidateGraph:
    edges = tuple(sorted(edge_set))
    return CandidateGraph(tuple(nodes), edges, {e: similarity(e) for e in edges}, tag, K)


def read_edges(path: str | Path, nodes: Sequence[str] | None = None) -> CandidateGraph:
    """Load an ``edges.csv`` written by :meth:`CandidateGraph.to_csv`."""
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    sims, tags = {}, set()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            e = canonical(row["stock_i"].strip(), row["stock_j"].strip())
            cell = row["similarity"].strip()
            sims[e] = float(cell) if cell else math.nan
            tags.add(row["tag"].strip())
    if len(tags) > 1:
        raise LoadError(f"{path}: mixed graph tags {sorted(tags)}")
    if nodes is None:
        nodes = sorted({s for e in sims for s in e})
    return _make(sorted(nodes), sims, sims.__getitem__, tags.pop() if tags else "semantic", None)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise GraphError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def similarity_matrix(vectors) -> np.ndarray:
    x = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(x, axis=1)
    if (norms == 0).any():
        raise GraphError("cosine similarity of a zero-norm vector")
    x = x / norms[:, None]
    return np.clip(x @ x.T, -1.0, 1.0)


def build_candidate_graph(vectors: Mapping[str, np.ndarray] | object, eligible: Sequence[str], K: int) -> CandidateGraph:
    """Top-``K`` cosine neighbours per stock, symmetrized by union.

    ``vectors`` is a mapping stock -> embedding, or anything with a
    ``matrix(stocks)`` method (a vintage of an :class:`EmbeddingSet`).
    Ties in similarity rank by ascending stock id.
    """
    nodes = sorted(eligible)
    n = len(nodes)
    if K < 1:
        raise GraphError("K must be positive")
    if K >= n:
        raise GraphError(f"K={K} must be smaller than the number of stocks ({n})")
    if hasattr(vectors, "matrix"):
        mat = vectors.matrix(nodes)
    else:
        try:
            mat = np.array([vectors[s] for s in nodes], dtype=float)
        except KeyError as exc:
            raise GraphError(f"no embedding for {exc.args[0]}") from None
    sim = similarity_matrix(mat)

    edges = set()
    ids = np.arange(n)
    for a in range(n):
        others = ids[ids != a]
        # nodes are sorted, so position order is id order: lexsort gives (-sim, id)
        order = np.lexsort((others, -sim[a, others]))
        for b in others[order[:K]]:
            edges.add((min(a, b), max(a, b)))
    pairs = {(nodes[a], nodes[b]) for a, b in edges}
    pos = {s: k for k, s in enumerate(nodes)}
    return _make(nodes, pairs, lambda e: float(sim[pos[e[0]], pos[e[1]]]), "semantic", K)


def build_random_graph(eligible: Sequence[str], K: int, seed) -> CandidateGraph:
    """Each stock draws ``K`` distinct neighbours uniformly; symmetrized by union.

    ``seed`` may be an int or a sequence of ints, e.g. ``(seed, window_index)``.
    """
    nodes = sorted(eligible)
    n = len(nodes)
    if K < 1:
        raise GraphError("K must be positive")
    if K >= n:
        raise GraphError(f"K={K} must be smaller than the number of stocks ({n})")
    rng = np.random.default_rng(seed)
    pairs = set()
    for a in range(n):
        draw = rng.choice(n - 1, size=K, replace=False)
        for b in draw:
            b = int(b) + (b >= a)
            pairs.add(canonical(nodes[a], nodes[b]))
    return _make(nodes, pairs, lambda e: math.nan, "random", K)


def build_industry_graph(eligible: Sequence[str], codes: Mapping[str, object]) -> CandidateGraph:
    """Clique on every group of stocks sharing an industry code."""
    nodes = sorted(eligible)
    missing = [s for s in nodes if s not in codes]
    if missing:
        raise GraphError(f"missing industry code for: {', '.join(missing)}")
    groups: dict[object, list[str]] = {}
    for s in nodes:
        groups.setdefault(codes[s], []).append(s)
    pairs = {
        (members[a], members[b])
        for members in groups.values()
        for a in range(len(members))
        for b in range(a + 1, len(members))
    }
    return _make(nodes, pairs, lambda e: math.nan, "industry", None)


def load_industry_codes(path: str | Path, digits: int = 2) -> dict[str, str]:
    """Read ``sic.csv`` (stock, code) and keep the leading ``digits`` of the 4-digit code."""
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    codes = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r, row in enumerate(csv.DictReader(fh), start=2):
            raw = row["code"].strip()
            if not raw.isdigit():
                raise LoadError(f"{path}:{r}: invalid industry code {raw!r}")
            codes[row["stock"].strip()] = raw.zfill(4)[:digits]
    return codes
