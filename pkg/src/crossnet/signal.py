"""Pair-level mean-reversion statistics and their aggregation into stock signals.

For an edge ``(i, j)`` in canonical order the spread is ``P_i - P_j`` of the
normalized price paths. A positive z-score means ``i`` is rich relative to
``j``; ``i`` receives ``-z`` and ``j`` receives ``+z``, each scaled by its own
per-stock weight.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CrossnetError, DegenerateSpread

SIGMA_FLOOR = 1e-8
WEIGHT_MODES = ("softmax", "equal")

Edge = tuple[str, str]


@dataclass(frozen=True)
class WindowSpec:
    """One rolling window: training ``[t0, t1]`` and test ``(t1, t2]``.

    ``start`` is the calendar position of ``t0``.
    """

    index: int
    t0: dt.date
    t1: dt.date
    t2: dt.date
    train_len: int
    test_len: int
    start: int = 0

    def __post_init__(self):
        if not self.t0 < self.t1 < self.t2:
            raise ValueError(f"window dates not increasing: {self.t0}, {self.t1}, {self.t2}")
        if self.train_len < 2 or self.test_len < 1:
            raise ValueError("train_len must be >= 2 and test_len >= 1")

    @property
    def stop(self) -> int:
        """Calendar position one past ``t2``."""
        return self.start + self.train_len + self.test_len

    @property
    def label(self) -> str:
        return f"w{self.index:03d}_{self.t1.isoformat()}"


@dataclass(frozen=True)
class PairModel:
    edge: Edge
    mu: float
    sigma: float
    dist: float


def normalized_prices(returns) -> np.ndarray:
    """Cumulative product of gross returns, ``P_t = prod_{tau <= t} (1 + r_tau)``.

    Works column-wise on a 2-D array. The base is the first row, so the first
    value is ``1 + r_0`` rather than 1.
    """
    r = np.asarray(returns, dtype=float)
    if np.isnan(r).any():
        raise CrossnetError("missing return in normalized price input")
    if (r <= -1.0).any():
        raise CrossnetError("return <= -1 in normalized price input")
    return np.cumprod(1.0 + r, axis=0)


def pair_stats(p_i, p_j, edge: Edge = ("", "")) -> PairModel:
    """Training statistics of the spread ``p_i - p_j``.

    ``sigma`` uses the n-1 denominator; ``dist`` is the sum of squared spreads.
    """
    p_i = np.asarray(p_i, dtype=float)
    p_j = np.asarray(p_j, dtype=float)
    if p_i.shape != p_j.shape or p_i.ndim != 1:
        raise CrossnetError("price paths must be 1-D and of equal length")
    if len(p_i) < 2:
        raise CrossnetError("need at least 2 training observations")
    s = p_i - p_j
    return PairModel(edge, float(s.mean()), float(s.std(ddof=1)), float(np.dot(s, s)))


def zscore(model: PairModel, spread, floor: float = SIGMA_FLOOR):
    """``(spread - mu) / sigma``; raises :class:`DegenerateSpread` below the floor."""
    if not model.sigma >= floor:
        raise DegenerateSpread(f"edge {model.edge}: sigma {model.sigma:.3g} below floor {floor:g}")
    out = (np.asarray(spread, dtype=float) - model.mu) / model.sigma
    return float(out) if out.ndim == 0 else out


def softmax_terms(distances) -> np.ndarray:
    """``exp(-d_k) / sum exp(-d)``, shifted by ``min(d)`` for stability."""
    d = np.asarray(distances, dtype=float)
    e = np.exp(-(d - d.min()))
    return e / e.sum()


def edge_weights(
    stock: str,
    incident: Sequence[tuple[PairModel, float]],
    mode: str = "softmax",
) -> np.ndarray:
    """Weights ``w^{(stock)}`` for each ``(model, omega)`` incident to ``stock``.

    Softmax mode: ``omega * n * softmax(-dist)`` with ``n = len(incident)``, so
    equal distances give weight ``omega``. Equal mode: ``omega`` alone.
    """
    if not incident:
        raise CrossnetError(f"stock {stock} has no incident edges")
    omega = np.array([w for _, w in incident], dtype=float)
    if mode == "equal":
        return omega
    if mode != "softmax":
        raise CrossnetError(f"unknown weighting mode {mode!r}")
    dist = np.array([m.dist for m, _ in incident], dtype=float)
    return omega * len(incident) * softmax_terms(dist)


@dataclass(frozen=True, eq=False)
class SignalMatrix:
    """Signals ``S[t, i]`` on the window's decision dates.

    ``degree[i]`` is the number of refined edges used for stock ``i``;
    stocks with degree 0 carry a zero signal and are flagged in ``isolated``.
    """

    dates: np.ndarray
    stocks: tuple[str, ...]
    values: np.ndarray
    degree: np.ndarray

    @property
    def isolated(self) -> np.ndarray:
        return self.degree == 0

    def column(self, stock: str) -> np.ndarray:
        return self.values[:, self.stocks.index(stock)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "stock", "S", "degree"])
            for t, d in enumerate(self.dates):
                for k, s in enumerate(self.stocks):
                    w.writerow([str(d), s, repr(float(self.values[t, k])), int(self.degree[k])])


def fit_pair_models(
    edges: Iterable[Edge],
    train_prices: np.ndarray,
    stocks: Sequence[str],
    floor: float = SIGMA_FLOOR,
) -> tuple[dict[Edge, PairModel], list[Edge]]:
    """Fit a :class:`PairModel` per edge; edges with sigma below ``floor`` are returned as skipped."""
    pos = {s: k for k, s in enumerate(stocks)}
    models, skipped = {}, []
    for i, j in edges:
        m = pair_stats(train_prices[:, pos[i]], train_prices[:, pos[j]], (i, j))
        if m.sigma < floor:
            skipped.append((i, j))
        else:
            models[(i, j)] = m
    return models, skipped


def aggregate_signals(
    refined,
    models: Mapping[Edge, PairModel],
    paths: np.ndarray,
    stocks: Sequence[str],
    dates=None,
    mode: str = "softmax",
) -> SignalMatrix:
    """Stock-level signals from the z-scores of every refined edge.

    Parameters
    ----------
    refined
        Graph exposing ``edges`` (canonical pairs) and ``weights`` (edge -> omega).
    models
        Fitted pair model for every refined edge.
    paths
        Normalized prices on the signal dates, shape ``(n_dates, len(stocks))``.
    stocks
        Column order of ``paths`` and of the returned matrix.
    """
    paths = np.asarray(paths, dtype=float)
    n_dates = paths.shape[0]
    pos = {s: k for k, s in enumerate(stocks)}

    incident: dict[str, list[tuple[Edge, PairModel, float]]] = {}
    for e in refined.edges:
        if e not in models:
            raise CrossnetError(f"refined edge {e} has no fitted pair model")
        m, omega = models[e], float(refined.weights[e])
        incident.setdefault(e[0], []).append((e, m, omega))
        incident.setdefault(e[1], []).append((e, m, omega))

    weight: dict[tuple[str, Edge], float] = {}
    for stock in sorted(incident):
        inc = incident[stock]
        w = edge_weights(stock, [(m, om) for _, m, om in inc], mode)
        for (e, _, _), wk in zip(inc, w):
            weight[(stock, e)] = float(wk)

    values = np.zeros((n_dates, len(stocks)))
    for e in refined.edges:
        i, j = e
        z = zscore(models[e], paths[:, pos[i]] - paths[:, pos[j]])
        values[:, pos[i]] -= z * weight[(i, e)]
        values[:, pos[j]] += z * weight[(j, e)]

    degree = np.array([len(incident.get(s, ())) for s in stocks], dtype=int)
    if dates is None:
        dates = np.arange(n_dates)
    return SignalMatrix(np.asarray(dates), tuple(stocks), values, degree)
