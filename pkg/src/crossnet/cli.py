"""Command-line entry point.

Exit codes: 0 success, 1 pipeline error, 2 configuration or I/O error,
3 classifier call budget exhausted (cache keeps everything classified so far).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from collections import Counter
from pathlib import Path

import pandas as pd

from .backtest import (
    BacktestConfig,
    MarketData,
    build_graph,
    make_windows,
    run_backtest,
    write_outputs,
)
from .config import RunConfig
from .errors import BudgetExceeded, ConfigError, CrossnetError, LoadError, WindowError
from .graph import CandidateGraph, load_industry_codes, read_edges
from .metrics import factor_regression, perf_report
from .panel import load_embeddings, load_membership, load_returns, slice_universe
from .relation import CallBudget, ClassificationCache, HttpClient, LabeledGraph, MockClient, classify_edges
from .relation.snippets import SnippetStore, load_firm_names
from .synth import generate_universe, load_synth_spec

logger = logging.getLogger("crossnet")

# (name, overrides on top of the configured backtest section), in reporting order
ABLATIONS = (
    ("semantic_baseline", {"graph_mode": "semantic", "relation_filter": False, "weighting": "softmax"}),
    ("llm_filtering", {"graph_mode": "semantic", "relation_filter": True, "weighting": "softmax"}),
    ("no_distance_weighting", {"graph_mode": "semantic", "relation_filter": True, "weighting": "equal"}),
    ("random_network", {"graph_mode": "random", "relation_filter": False, "weighting": "softmax"}),
    ("sic_industry_network", {"graph_mode": "industry", "relation_filter": False, "weighting": "softmax"}),
)


def load_market_data(cfg: RunConfig) -> MarketData:
    panel = load_returns(cfg.path("data", "returns"))
    names = {s: [] for s in panel.stocks}
    if cfg.raw["data"]["names"]:
        names.update(load_firm_names(cfg.path("data", "names")))
    store = None
    if cfg.raw["data"]["filings"] and cfg.path("data", "filings").is_dir():
        store = SnippetStore(cfg.path("data", "filings"), cfg.raw["snippet_budgets"], names)
    codes = load_industry_codes(cfg.path("data", "sic")) if cfg.raw["data"]["sic"] else None
    return MarketData(
        panel=panel,
        members=load_membership(cfg.path("data", "membership")),
        embeddings=load_embeddings(cfg.path("data", "embeddings")),
        snippets=store,
        industry_codes=codes,
        names=store.all_names() if store is not None else tuple(sorted(names)),
    )


def make_client(cfg: RunConfig):
    c = cfg.raw["classifier"]
    if c["kind"] == "mock":
        return MockClient.from_csv(cfg.path("classifier", "fixture"))
    return HttpClient(c["url"], c["model"], c["api_key_env"], c["timeout"])


def classify_kwargs(cfg: RunConfig) -> dict:
    c = cfg.raw["classifier"]
    return {"retries": c["retries"], "backoff": c["backoff"], "parallelism": c["parallelism"]}


def load_factors(path: Path) -> pd.DataFrame:
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    df = pd.read_csv(path, parse_dates=["date"], float_precision="round_trip").set_index("date").sort_index()
    if df.index.has_duplicates:
        raise LoadError(f"{path}: duplicate dates")
    return df


def regress_on_factors(ls: pd.Series, factors: pd.DataFrame, lags=None) -> dict:
    joined = pd.concat([ls.rename("__y"), factors], axis=1, join="inner").dropna()
    if len(joined) < len(factors.columns) + 3:
        raise CrossnetError("too few overlapping dates between returns and factors")
    res = factor_regression(joined["__y"].to_numpy(), joined[factors.columns].to_numpy(), list(factors.columns), lags)
    return res.to_dict()


def _atomic_dir(target: Path):
    """Temp directory next to ``target``; call the returned commit() to swap it in."""
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.tmp-", dir=target.parent))

    def commit():
        old = None
        if target.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{target.name}.old-", dir=target.parent))
            os.replace(target, old / "prev")
        os.replace(tmp, target)
        if old is not None:
            shutil.rmtree(old, ignore_errors=True)

    def abort():
        shutil.rmtree(tmp, ignore_errors=True)

    return tmp, commit, abort


# --- subcommands --------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec)
    out = Path(args.out)
    tmp, commit, abort = _atomic_dir(out)
    try:
        manifest = generate_universe(spec).write(tmp)
        commit()
    except BaseException:
        abort()
        raise
    print(f"wrote {len(manifest['files'])} files to {out} (seed {spec.seed})")
    return 0


def cmd_ingest_check(args, cfg: RunConfig) -> int:
    data = load_market_data(cfg)
    p = data.panel
    print(f"returns: {p.shape[0]} dates x {p.shape[1]} stocks, {int(p.mask.sum())} missing cells")
    print(f"calendar: {p.dates[0]} .. {p.dates[-1]}")
    print(f"membership: {len(data.members.entries)} intervals")
    for y in data.embeddings.years:
        v = data.embeddings.vintage(y)
        print(f"embeddings {y}: {len(v.stocks)} stocks, D={v.dim}")
    print(f"zero-norm embeddings dropped: {data.embeddings.dropped}")
    bt = cfg.backtest_config()
    windows = make_windows(p.dates, bt.train_len, bt.test_len)
    sizes = []
    for w in windows:
        try:
            sizes.append(len(slice_universe(p, data.members, data.embeddings, w, bt.groups).eligible))
        except CrossnetError as exc:
            print(f"window {w.index}: {exc}")
            sizes.append(0)
    print(f"windows: {len(windows)}, eligible per window: min {min(sizes)}, max {max(sizes)}")
    return 0 if min(sizes) > 0 else 1


def _window_graphs(cfg: RunConfig, data: MarketData, bt: BacktestConfig):
    for w in make_windows(data.panel.dates, bt.train_len, bt.test_len):
        try:
            uni = slice_universe(data.panel, data.members, data.embeddings, w, bt.groups)
            yield w, uni, build_graph(bt, data, uni)
        except CrossnetError as exc:
            raise WindowError(w.index, exc) from exc


def cmd_build_graph(args, cfg: RunConfig) -> int:
    data = load_market_data(cfg)
    bt = cfg.backtest_config()
    for w, uni, graph in _window_graphs(cfg, data, bt):
        if w.index == args.window:
            out = Path(args.out) if args.out else cfg.path("output") / "edges.csv"
            out.parent.mkdir(parents=True, exist_ok=True)
            graph.to_csv(out)
            deg = graph.degree().values()
            print(f"window {w.index} (vintage {uni.vintage}): {len(graph.nodes)} nodes, {len(graph)} edges, "
                  f"degree {min(deg)}..{max(deg)} -> {out}")
            return 0
    raise CrossnetError(f"no window with index {args.window}")


def cmd_classify(args, cfg: RunConfig) -> int:
    client = make_client(cfg)
    cache = ClassificationCache(cfg.path("cache"))
    budget = CallBudget(cfg.raw["classifier"]["call_budget"])
    data = None
    jobs: list[tuple[int, CandidateGraph]] = []
    if args.edges:
        if args.year is None:
            raise ConfigError("--edges requires --year (vintage year of the filings)")
        jobs.append((args.year, read_edges(args.edges)))
    else:
        data = load_market_data(cfg)
        bt = cfg.backtest_config()
        per_year: dict[int, set] = {}
        for _, uni, graph in _window_graphs(cfg, data, bt):
            per_year.setdefault(uni.vintage, set()).update(graph.edges)
        for year, edges in sorted(per_year.items()):
            nodes = sorted({s for e in edges for s in e})
            jobs.append((year, CandidateGraph(tuple(nodes), tuple(sorted(edges)), dict.fromkeys(edges, float("nan")), "semantic")))

    if data is None:
        known = {s: [] for _, g in jobs for s in g.nodes}
        if cfg.raw["data"]["names"]:
            known.update(load_firm_names(cfg.path("data", "names")))
        store = SnippetStore(cfg.path("data", "filings"), cfg.raw["snippet_budgets"], known)
        names = list(store.all_names())
    else:
        store, names = data.snippets, list(data.names)
    totals, hist = Counter(), Counter()
    try:
        for year, graph in jobs:
            labeled: LabeledGraph = classify_edges(
                graph, store.for_year(year) if store is not None else {}, client, cache, year,
                budget=budget, names=names, **classify_kwargs(cfg),
            )
            totals.update(labeled.stats)
            hist.update(labeled.histogram())
    except BudgetExceeded as exc:
        print(f"call budget exceeded: {exc}", file=sys.stderr)
        print(f"cache rows: {len(cache)}", file=sys.stderr)
        return 3
    print(f"edges: {totals['edges']}")
    print(f"cache hits: {totals['cache_hits']}")
    print(f"live calls: {totals['live_calls']}")
    print(f"warnings: {totals['fallbacks']}")
    print("labels: " + ", ".join(f"{k}={hist[k]}" for k in sorted(hist)))
    return 0


def _run_one(cfg: RunConfig, data: MarketData, bt: BacktestConfig, client, cache, budget, echo: dict, out: Path, signals: bool):
    result = run_backtest(
        bt, data, client if bt.relation_filter else None, cache,
        budget=budget, workers=cfg.raw["workers"], classify_kwargs=classify_kwargs(cfg),
    )
    echo = dict(echo)
    echo["backtest"] = {k: v for k, v in bt.to_dict().items() if k != "relation_weights"}
    extra = {}
    if cfg.raw["data"]["factors"]:
        extra["factor_regression"] = regress_on_factors(result.ls, load_factors(cfg.path("data", "factors")), bt.nw_lags)
    return write_outputs(result, out, echo, signals, extra)


def cmd_backtest(args, cfg: RunConfig) -> int:
    data = load_market_data(cfg)
    bt = cfg.backtest_config()
    variants = [(name, BacktestConfig(**{**bt.to_dict(), **over})) for name, over in ABLATIONS] if args.ablations else [(None, bt)]
    needs_client = any(v.relation_filter for _, v in variants)
    client = make_client(cfg) if needs_client else None
    cache = ClassificationCache(cfg.path("cache")) if needs_client else None
    budget = CallBudget(cfg.raw["classifier"]["call_budget"])
    echo = cfg.effective()

    out = cfg.path("output")
    tmp, commit, abort = _atomic_dir(out)
    try:
        rows = []
        for name, variant in variants:
            target = tmp / name if name else tmp
            summary = _run_one(cfg, data, variant, client, cache, budget, echo, target, args.signals)
            rows.append({"name": name, **summary["metrics"]})
            m = summary["metrics"]
            label = name or "backtest"
            print(f"{label}: sharpe {_num(m['sharpe'])}  r_ann {_num(m['r_ann'])}  "
                  f"mdd {_num(m['mdd'])}  TO {_num(m['to_ann'])}  t_nw {_num(m['t_nw'])}")
        if args.ablations:
            with open(tmp / "ablations.json", "w", encoding="utf-8") as fh:
                json.dump(rows, fh, indent=2, allow_nan=False)
                fh.write("\n")
        commit()
    except BudgetExceeded as exc:
        abort()
        print(f"call budget exceeded: {exc}", file=sys.stderr)
        return 3
    except BaseException:
        abort()
        raise
    print(f"results written to {out}")
    return 0


def _num(x) -> str:
    return "nan" if x is None else f"{x:.4f}"


def cmd_report(args) -> int:
    results = Path(args.results)
    ls = pd.read_csv(results / "ls_returns.csv", parse_dates=["date"], float_precision="round_trip").set_index("date")["r_ls"]
    to_ann = float("nan")
    summary_path = results / "summary.json"
    if summary_path.exists():
        prev = json.loads(summary_path.read_text(encoding="utf-8"))
        to_ann = prev.get("metrics", {}).get("to_ann") or float("nan")
    report = {"metrics": perf_report(ls.to_numpy(), to_ann, args.lags).to_dict()}
    if args.factors:
        report["factor_regression"] = regress_on_factors(ls, load_factors(Path(args.factors)), args.lags)
    print(json.dumps(report, indent=2, allow_nan=False))
    return 0


# --- argument parsing ---------------------------------------------------------


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", "-c", help="JSON run configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. backtest.K=10 (repeatable)")
    p.add_argument("--out", help="output directory (overrides 'output')")
    p.add_argument("--seed", type=int, help="overrides backtest.seed")
    p.add_argument("--graph-mode", choices=("semantic", "random", "industry"))
    p.add_argument("--weighting", choices=("softmax", "equal"))
    p.add_argument("--no-filter", action="store_true", help="disable relation filtering")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossnet",
        description="Relation-filtered cross-stock pairs signals and their rolling backtest.",
        epilog=__doc__.split("\n\n", 1)[1],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _config_parent()

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("spec", help="JSON synth spec")
    p.add_argument("out", help="output directory")

    sub.add_parser("ingest-check", parents=[common], help="load and validate all inputs")

    p = sub.add_parser("build-graph", parents=[common], help="export one window's candidate graph")
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--edges-out", dest="out_edges", help="edges.csv path")

    p = sub.add_parser("classify", parents=[common], help="classify candidate edges into the cache")
    p.add_argument("--edges", help="classify this edges.csv instead of the windows' graphs")
    p.add_argument("--year", type=int, help="vintage year for --edges")

    p = sub.add_parser("backtest", parents=[common], help="run the rolling backtest")
    p.add_argument("--ablations", action="store_true", help="run the five ablation variants")
    p.add_argument("--signals", action="store_true", help="also dump per-window signal matrices")

    p = sub.add_parser("report", help="performance report of a results directory")
    p.add_argument("results")
    p.add_argument("--factors", help="factors.csv for the factor regression")
    p.add_argument("--lags", type=int, help="Newey-West lag (default: rule of thumb)")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config, args.set)
    flags = {
        "output": args.out,
        "backtest.seed": args.seed,
        "backtest.graph_mode": args.graph_mode,
        "backtest.weighting": args.weighting,
        "backtest.relation_filter": False if args.no_filter else None,
    }
    for key, value in flags.items():
        if value is not None:
            cfg.set(key, str(Path(value).resolve()) if key == "output" else value)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "report":
            return cmd_report(args)
        cfg = _load_config(args)
        if args.command == "ingest-check":
            return cmd_ingest_check(args, cfg)
        if args.command == "build-graph":
            args.out = getattr(args, "out_edges", None)
            return cmd_build_graph(args, cfg)
        if args.command == "classify":
            return cmd_classify(args, cfg)
        return cmd_backtest(args, cfg)
    except (ConfigError, LoadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BudgetExceeded as exc:
        print(f"call budget exceeded: {exc}", file=sys.stderr)
        return 3
    except CrossnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
