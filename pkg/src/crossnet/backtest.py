"""Rolling-window long-short backtest.

Each window trains pair models on ``[t0, t1]`` and trades on ``(t1, t2]``.
The signal observed at the close of day ``t`` sets the book held over day
``t+1``, so the first test day trades on the training-end signal and no
window reads a return dated after its own ``t2``.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import BudgetExceeded, ConfigError, CrossnetError, WindowError
from .graph import build_candidate_graph, build_industry_graph, build_random_graph
from .metrics import TRADING_DAYS, PerfReport, perf_report
from .panel import EmbeddingSet, MembershipTable, ReturnPanel, UniverseSlice, slice_universe
from .relation import (
    DEFAULT_RELATION_WEIGHTS,
    CallBudget,
    ClassificationCache,
    RefinedGraph,
    apply_relation_filter,
    classify_edges,
    validate_weight_table,
)
from .signal import WEIGHT_MODES, SignalMatrix, WindowSpec, aggregate_signals, fit_pair_models, normalized_prices

logger = logging.getLogger(__name__)

GRAPH_MODES = ("semantic", "random", "industry")
TURNOVER_CONVENTION = "one-sided: 0.5 * sum |w_t - w_pre|, mean daily value x 252"


@dataclass(frozen=True)
class BacktestConfig:
    K: int = 5
    train_len: int = 180
    test_len: int = 42
    groups: int = 5
    rebalance: str | int = "daily"
    graph_mode: str = "semantic"
    weighting: str = "softmax"
    relation_filter: bool = True
    relation_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_RELATION_WEIGHTS))
    seed: int = 0
    nw_lags: int | None = None

    def __post_init__(self):
        if self.groups < 2:
            raise ConfigError("groups must be >= 2")
        if self.train_len < 2:
            raise ConfigError("train_len must be >= 2")
        if self.test_len < 1:
            raise ConfigError("test_len must be >= 1")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.graph_mode not in GRAPH_MODES:
            raise ConfigError(f"graph_mode must be one of {GRAPH_MODES}")
        if self.weighting not in WEIGHT_MODES:
            raise ConfigError(f"weighting must be one of {WEIGHT_MODES}")
        if self.nw_lags is not None and self.nw_lags < 0:
            raise ConfigError("nw_lags must be >= 0")
        self.rebalance_every  # validates
        object.__setattr__(self, "relation_weights", validate_weight_table(self.relation_weights))

    @property
    def rebalance_every(self) -> int:
        r = self.rebalance
        if r == "daily":
            return 1
        if r == "monthly":
            return 21
        if isinstance(r, bool) or not isinstance(r, int) or r < 1:
            raise ConfigError(f"rebalance must be 'daily', 'monthly' or a positive day count, got {r!r}")
        return r

    def to_dict(self) -> dict:
        d = asdict(self)
        d["relation_weights"] = dict(self.relation_weights)
        return d


@dataclass
class MarketData:
    panel: ReturnPanel
    members: MembershipTable
    embeddings: EmbeddingSet
    snippets: Any = None  # SnippetStore or {year: {stock: FirmSnippets}}
    industry_codes: Mapping[str, object] | None = None
    names: Sequence[str] = ()

    def snippets_for(self, year: int) -> Mapping:
        if self.snippets is None:
            return {}
        if hasattr(self.snippets, "for_year"):
            return self.snippets.for_year(year)
        return self.snippets.get(year, {})


@dataclass(frozen=True)
class GroupAssignment:
    date: Any
    groups: Mapping[str, int]

    def members(self, g: int) -> list[str]:
        return sorted(s for s, k in self.groups.items() if k == g)


def make_windows(calendar, train_len: int, test_len: int) -> list[WindowSpec]:
    """Consecutive windows whose test periods tile the calendar after the first training span."""
    cal = [_to_date(d) for d in calendar]
    n = (len(cal) - train_len) // test_len if len(cal) >= train_len else 0
    if n < 1:
        raise CrossnetError(
            f"calendar too short: {len(cal)} dates for train {train_len} + test {test_len}"
        )
    out = []
    for k in range(n):
        s = k * test_len
        out.append(
            WindowSpec(
                index=k,
                t0=cal[s],
                t1=cal[s + train_len - 1],
                t2=cal[s + train_len + test_len - 1],
                train_len=train_len,
                test_len=test_len,
                start=s,
            )
        )
    return out


def _to_date(d) -> dt.date:
    if isinstance(d, dt.datetime):
        return d.date()
    if isinstance(d, dt.date):
        return d
    return dt.date.fromisoformat(str(np.datetime64(d, "D")))


def group_index(values: np.ndarray, G: int) -> np.ndarray:
    """Group numbers ``1..G`` for ``values`` whose positions are already in id order.

    Ascending sort with ties by position; rank ``k`` goes to ``floor(k G / N) + 1``.
    """
    n = len(values)
    order = np.lexsort((np.arange(n), values))
    out = np.empty(n, dtype=int)
    out[order] = np.arange(n) * G // n + 1
    return out


def sort_quintiles(signals: Mapping[str, float], G: int, date=None) -> GroupAssignment:
    """Partition stocks into ``G`` groups by ascending signal; group 1 is the lowest."""
    if len(signals) < G:
        raise CrossnetError(f"need at least {G} scored stocks, got {len(signals)}")
    ids = sorted(signals)
    g = group_index(np.array([signals[s] for s in ids], dtype=float), G)
    return GroupAssignment(date, dict(zip(ids, (int(x) for x in g))))


def book_weights(assignment: GroupAssignment, G: int) -> dict[str, float]:
    """Equal-weight long group ``G`` (+1 gross) and short group 1 (-1 gross)."""
    long_, short = assignment.members(G), assignment.members(1)
    w = {s: 1.0 / len(long_) for s in long_}
    w.update({s: -1.0 / len(short) for s in short})
    return w


def compute_group_returns(
    assignments: Sequence[GroupAssignment],
    panel: ReturnPanel,
    G: int,
    until=None,
) -> pd.DataFrame:
    """Equal-weighted group returns and the long-short spread.

    Membership set on ``assignment.date`` earns the returns of the following
    trading days, up to the next assignment (or ``until``, default the last
    panel date). Returns a frame indexed by holding date with columns
    ``g1..gG`` and ``ls = gG - g1``.
    """
    if not assignments:
        raise CrossnetError("no group assignments")
    dates = panel.dates
    last = len(dates) - 1 if until is None else panel.date_index(until)
    pos = {s: k for k, s in enumerate(panel.stocks)}
    starts = [panel.date_index(a.date) + 1 for a in assignments]
    ends = starts[1:] + [last + 1]
    rows, index = [], []
    for a, lo, hi in zip(assignments, starts, ends):
        cols = []
        for g in range(1, G + 1):
            members = a.members(g)
            if not members:
                raise CrossnetError(f"group {g} is empty on {a.date}")
            cols.append([pos[s] for s in members])
        for t in range(lo, hi):
            vals = panel.values[t]
            r = [vals[c].mean() for c in cols]
            if any(math.isnan(x) for x in r):
                raise CrossnetError(f"missing member return on {dates[t]}")
            rows.append(r + [r[-1] - r[0]])
            index.append(pd.Timestamp(dates[t]))
    names = [f"g{g}" for g in range(1, G + 1)] + ["ls"]
    return pd.DataFrame(rows, index=pd.DatetimeIndex(index, name="date"), columns=names)


def compute_turnover(weights: pd.DataFrame, pre_trade: pd.DataFrame | None = None) -> float:
    """Annualized one-sided turnover of a dated weight series.

    ``TO_t = 0.5 * sum_i |w_t - w_{t-1}|`` and the result is ``252 * mean(TO_t)``.
    If ``pre_trade`` is given it replaces ``w_{t-1}`` (e.g. drifted holdings).
    """
    return float(turnover_series(weights, pre_trade).mean() * TRADING_DAYS)


def turnover_series(weights: pd.DataFrame, pre_trade: pd.DataFrame | None = None) -> pd.Series:
    w = weights.fillna(0.0)
    if len(w) < 2:
        raise CrossnetError("turnover needs at least two dated weight vectors")
    prev = w.shift(1) if pre_trade is None else pre_trade.reindex_like(w).fillna(0.0)
    return 0.5 * (w - prev).abs().sum(axis=1).iloc[1:]


@dataclass
class PreparedWindow:
    window: WindowSpec
    universe: UniverseSlice
    refined: RefinedGraph
    diagnostics: dict


@dataclass
class WindowResult:
    window: WindowSpec
    returns: pd.DataFrame
    weights: pd.DataFrame
    rebalance: pd.Series
    signals: SignalMatrix
    diagnostics: dict


@dataclass
class BacktestResult:
    config: BacktestConfig
    returns: pd.DataFrame
    weights: pd.DataFrame
    turnover: pd.Series
    windows: list[WindowSpec]
    diagnostics: list[dict]
    signals: list[SignalMatrix] = field(default_factory=list, repr=False)

    @property
    def ls(self) -> pd.Series:
        return self.returns["ls"]

    @property
    def to_ann(self) -> float:
        return float(self.turnover.mean() * TRADING_DAYS) if len(self.turnover) else float("nan")

    def report(self) -> PerfReport:
        return perf_report(self.ls.to_numpy(), self.to_ann, self.config.nw_lags)

    def group_reports(self) -> dict[str, PerfReport]:
        return {c: perf_report(self.returns[c].to_numpy(), lags=self.config.nw_lags) for c in self.returns.columns}


def build_graph(config: BacktestConfig, data: MarketData, universe: UniverseSlice):
    w = universe.window
    if config.graph_mode == "semantic":
        return build_candidate_graph(data.embeddings.vintage(universe.vintage), universe.eligible, config.K)
    if config.graph_mode == "random":
        return build_random_graph(universe.eligible, config.K, (config.seed, w.index))
    if data.industry_codes is None:
        raise ConfigError("graph_mode 'industry' requires industry codes")
    return build_industry_graph(universe.eligible, data.industry_codes)


def prepare_window(
    config: BacktestConfig,
    data: MarketData,
    window: WindowSpec,
    client: Callable | None = None,
    cache: ClassificationCache | None = None,
    budget: CallBudget | None = None,
    classify_kwargs: Mapping | None = None,
) -> PreparedWindow:
    """Universe, candidate graph and (optionally) relation-filtered graph for a window."""
    universe = slice_universe(data.panel, data.members, data.embeddings, window, config.groups)
    graph = build_graph(config, data, universe)
    diag = {
        "window": window.index,
        "t0": window.t0.isoformat(),
        "t1": window.t1.isoformat(),
        "t2": window.t2.isoformat(),
        "vintage": universe.vintage,
        "n_eligible": len(universe.eligible),
        "filled_returns": universe.fill_count,
        "candidate_edges": len(graph.edges),
    }
    if config.relation_filter:
        if client is None:
            raise ConfigError("relation filtering requires a classifier client")
        labeled = classify_edges(
            graph,
            data.snippets_for(universe.vintage),
            client,
            cache,
            universe.vintage,
            budget=budget,
            names=data.names,
            **dict(classify_kwargs or {}),
        )
        refined = apply_relation_filter(labeled, config.relation_weights)
        diag["labels"] = labeled.histogram()
        diag["fallbacks"] = labeled.stats["fallbacks"]
        # depends on cache state, so kept out of summary.json
        diag["classification"] = {k: labeled.stats[k] for k in ("cache_hits", "live_calls")}
        logger.info("window %d: %d cache hits, %d live calls", window.index, labeled.stats["cache_hits"], labeled.stats["live_calls"])
    else:
        refined = RefinedGraph.unfiltered(graph)
    diag["refined_edges"] = len(refined.edges)
    return PreparedWindow(window, universe, refined, diag)


def evaluate_window(config: BacktestConfig, prepared: PreparedWindow) -> WindowResult:
    """Fit pair models, build signals and accrue group returns for one window."""
    w, uni = prepared.window, prepared.universe
    stocks = uni.eligible
    prices = normalized_prices(uni.panel.values)
    L, H = w.train_len, w.test_len

    models, skipped = fit_pair_models(prepared.refined.edges, prices[:L], stocks)
    refined = prepared.refined.without(skipped) if skipped else prepared.refined
    decision = slice(L - 1, L + H - 1)
    sig = aggregate_signals(
        refined, models, prices[decision], stocks, uni.panel.dates[decision], config.weighting
    )

    every = config.rebalance_every
    assignments = []
    for k in range(0, H, every):
        g = group_index(sig.values[k], config.groups)
        assignments.append(GroupAssignment(uni.panel.dates[L - 1 + k], dict(zip(stocks, g.tolist()))))
    returns = compute_group_returns(assignments, uni.panel, config.groups)

    hold_dates = returns.index
    weights = np.zeros((H, len(stocks)))
    rebalance = np.zeros(H, dtype=bool)
    pos = {s: k for k, s in enumerate(stocks)}
    for n, a in enumerate(assignments):
        lo, hi = n * every, min((n + 1) * every, H)
        rebalance[lo] = True
        row = np.zeros(len(stocks))
        for s, v in book_weights(a, config.groups).items():
            row[pos[s]] = v
        weights[lo:hi] = row

    diag = dict(prepared.diagnostics)
    diag["skipped_edges"] = len(skipped)
    diag["used_edges"] = len(refined.edges)
    diag["isolated_stocks"] = int(sig.isolated.sum())
    return WindowResult(
        window=w,
        returns=returns,
        weights=pd.DataFrame(weights, index=hold_dates, columns=list(stocks)),
        rebalance=pd.Series(rebalance, index=hold_dates),
        signals=sig,
        diagnostics=diag,
    )


def _drifted(weights: pd.DataFrame, panel: ReturnPanel) -> pd.DataFrame:
    """Holdings at the next open after earning the day's return, each leg rescaled to gross 1."""
    r = pd.DataFrame(panel.values, index=pd.DatetimeIndex(panel.dates), columns=list(panel.stocks))
    r = r.reindex(index=weights.index, columns=weights.columns).fillna(0.0)
    grown = weights * (1.0 + r)
    long_ = grown.clip(lower=0.0)
    short = grown.clip(upper=0.0)
    lsum = long_.sum(axis=1).replace(0.0, np.nan)
    ssum = (-short).sum(axis=1).replace(0.0, np.nan)
    out = long_.div(lsum, axis=0).fillna(0.0) + short.div(ssum, axis=0).fillna(0.0)
    return out.shift(1)


def combine_windows(config: BacktestConfig, results: Sequence[WindowResult], panel: ReturnPanel) -> BacktestResult:
    returns = pd.concat([r.returns for r in results])
    weights = pd.concat([r.weights for r in results]).fillna(0.0)
    weights = weights.reindex(columns=sorted(weights.columns), fill_value=0.0)
    rebalance = pd.concat([r.rebalance for r in results])
    if config.rebalance_every == 1:
        turnover = turnover_series(weights)
    else:
        pre = _drifted(weights, panel)
        full = 0.5 * (weights - pre.fillna(0.0)).abs().sum(axis=1)
        turnover = full.where(rebalance, 0.0).iloc[1:]
    return BacktestResult(
        config=config,
        returns=returns,
        weights=weights,
        turnover=turnover,
        windows=[r.window for r in results],
        diagnostics=[r.diagnostics for r in results],
        signals=[r.signals for r in results],
    )


def run_backtest(
    config: BacktestConfig,
    data: MarketData,
    client: Callable | None = None,
    cache: ClassificationCache | None = None,
    *,
    budget: CallBudget | None = None,
    workers: int = 1,
    windows: Sequence[WindowSpec] | None = None,
    classify_kwargs: Mapping | None = None,
) -> BacktestResult:
    """Run every rolling window and concatenate the daily series.

    Classification runs window by window against the shared cache; the
    remaining per-window work may use ``workers`` threads. Output does not
    depend on ``workers``.
    """
    if windows is None:
        windows = make_windows(data.panel.dates, config.train_len, config.test_len)
    if cache is None and config.relation_filter:
        cache = ClassificationCache()

    prepared = []
    for w in windows:
        try:
            prepared.append(prepare_window(config, data, w, client, cache, budget, classify_kwargs))
        except (BudgetExceeded, ConfigError):
            raise
        except CrossnetError as exc:
            raise WindowError(w.index, exc) from exc

    def run(p: PreparedWindow) -> WindowResult:
        try:
            return evaluate_window(config, p)
        except CrossnetError as exc:
            raise WindowError(p.window.index, exc) from exc

    if workers > 1 and len(prepared) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, prepared))
    else:
        results = [run(p) for p in prepared]
    return combine_windows(config, results, data.panel)


# --- output files -----------------------------------------------------------


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def write_ls_returns(result: BacktestResult, path: Path) -> None:
    cols = [c for c in result.returns.columns if c != "ls"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "r_ls", *cols])
        for d, row in result.returns.iterrows():
            w.writerow([d.date().isoformat(), _fmt(row["ls"]), *(_fmt(row[c]) for c in cols)])


def write_cumcurves(result: BacktestResult, path: Path) -> None:
    curves = (1.0 + result.returns).cumprod()
    cols = list(curves.columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *cols])
        for d, row in curves.iterrows():
            w.writerow([d.date().isoformat(), *(_fmt(row[c]) for c in cols)])


def summary_dict(result: BacktestResult, config_echo: Mapping | None = None) -> dict:
    rep = result.report()
    groups = {k: v.to_dict() for k, v in result.group_reports().items()}
    diag = result.diagnostics
    return {
        "config": dict(config_echo) if config_echo is not None else result.config.to_dict(),
        "metrics": rep.to_dict(),
        "groups": groups,
        "turnover_convention": TURNOVER_CONVENTION,
        "n_windows": len(result.windows),
        "first_date": result.returns.index[0].date().isoformat(),
        "last_date": result.returns.index[-1].date().isoformat(),
        "diagnostics": {
            "filled_returns": sum(d["filled_returns"] for d in diag),
            "skipped_edges": sum(d["skipped_edges"] for d in diag),
            "mean_eligible": float(np.mean([d["n_eligible"] for d in diag])),
            "mean_candidate_edges": float(np.mean([d["candidate_edges"] for d in diag])),
            "mean_refined_edges": float(np.mean([d["used_edges"] for d in diag])),
            "windows": [{k: v for k, v in d.items() if k != "classification"} for d in diag],
        },
    }


def write_outputs(
    result: BacktestResult,
    outdir: str | Path,
    config_echo: Mapping | None = None,
    signals: bool = False,
    extra: Mapping | None = None,
) -> dict:
    """Write ``ls_returns.csv``, ``cumcurves.csv`` and ``summary.json`` into ``outdir``.

    ``extra`` entries are added to the summary. Returns the summary dict.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    write_ls_returns(result, out / "ls_returns.csv")
    write_cumcurves(result, out / "cumcurves.csv")
    summary = {**summary_dict(result, config_echo), **(extra or {})}
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, allow_nan=False)
        fh.write("\n")
    if signals:
        sd = out / "signals"
        sd.mkdir(exist_ok=True)
        for w, s in zip(result.windows, result.signals):
            s.to_csv(sd / f"{w.label}.csv")
    return summary


__all__ = [
    "BacktestConfig",
    "BacktestResult",
    "GroupAssignment",
    "MarketData",
    "compute_group_returns",
    "compute_turnover",
    "make_windows",
    "run_backtest",
    "sort_quintiles",
    "write_outputs",
]
