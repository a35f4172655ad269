from __future__ import annotations

import datetime as dt

import numpy as np
import pandas as pd
import pytest

from crossnet.panel import EmbeddingSet, MembershipTable, ReturnPanel
from crossnet.synth import SynthSpec, generate_universe

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def bdates(n: int, start: str = "2015-01-02") -> np.ndarray:
    return pd.bdate_range(start, periods=n).values.astype("datetime64[D]")


def make_market(values, stocks=None, start="2015-01-02", vectors=None, seed=0):
    """Panel, full-span membership and embeddings for every year the calendar touches."""
    values = np.asarray(values, dtype=float)
    T, N = values.shape
    stocks = tuple(stocks or (f"S{k:02d}" for k in range(N)))
    dates = bdates(T, start)
    panel = ReturnPanel(dates, stocks, values)
    first = pd.Timestamp(dates[0]).date()
    last = pd.Timestamp(dates[-1]).date()
    members = MembershipTable.full_span(stocks, first, last)
    if vectors is None:
        vectors = np.random.default_rng(seed).standard_normal((N, 4))
    emb = EmbeddingSet.from_arrays({y: (stocks, vectors) for y in range(first.year - 1, last.year + 1)})
    return panel, members, emb


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    spec = SynthSpec(n_stocks=30, n_days=400, n_clusters=5, seed=7)
    return generate_universe(spec)


@pytest.fixture
def day():
    return dt.date(2015, 1, 2)
