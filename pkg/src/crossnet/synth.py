"""Synthetic markets with planted, labeled pair relationships.

Stocks fall into embedding clusters. Every pair inside a cluster gets a
ground-truth relation label from the SynthSpec label plan:

* supply_chain / complementary / substitute / peer pairs carry a
  mean-reverting spread ``s_{t+1} = (1 - kappa) s_t + eta * eps``,
* competitor pairs carry a drifting random walk instead,
* unrelated pairs carry nothing.

A spread enters returns antisymmetrically: ``+ds/2`` for the canonically
first stock and ``-ds/2`` for the second.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .backtest import MarketData
from .errors import ConfigError
from .graph import canonical
from .panel import EmbeddingSet, MembershipTable, ReturnPanel
from .relation.clients import MockClient
from .relation.prompt import LABELS
from .relation.snippets import FirmSnippets, extract_snippets

LINKED = ("supply_chain", "complementary", "substitute", "peer")

DEFAULT_PLAN = {
    "supply_chain": 0.15,
    "complementary": 0.10,
    "substitute": 0.05,
    "peer": 0.10,
    "competitor": 0.30,
    "unrelated": 0.30,
}

_INDUSTRIES = (
    ("semiconductor devices", "wafer fabrication equipment", "chip design software"),
    ("regional banking", "consumer lending", "payment processing"),
    ("oil and gas exploration", "pipeline transport", "refining"),
    ("medical devices", "diagnostic imaging", "surgical instruments"),
    ("specialty retail", "apparel brands", "e-commerce fulfilment"),
    ("commercial aircraft parts", "defense electronics", "avionics"),
    ("packaged foods", "beverages", "agricultural commodities"),
    ("electric utilities", "natural gas distribution", "renewable generation"),
    ("enterprise software", "cloud infrastructure", "cybersecurity"),
    ("pharmaceuticals", "biologics", "generic drugs"),
    ("freight railroads", "trucking logistics", "container shipping"),
    ("residential construction", "building materials", "home improvement"),
)

_RELATION_SENTENCES = {
    "supply_chain": "A significant share of our inputs is purchased from a single upstream supplier in our industry.",
    "complementary": "Our products are typically sold alongside complementary offerings from partner firms.",
    "substitute": "Customers may substitute alternative products that serve the same need at a lower price.",
    "peer": "We operate alongside peer companies that share similar business models and customer bases.",
    "competitor": "We compete with several large firms that target the same customers.",
    "unrelated": "",
}


@dataclass(frozen=True)
class SynthSpec:
    n_stocks: int = 50
    n_days: int = 1500
    n_clusters: int = 8
    embed_dim: int = 16
    embed_noise: float = 0.15
    spurious_fraction: float = 0.0
    market_vol: float = 0.01
    cluster_vol: float = 0.005
    idio_vol: float = 0.005
    kappa: float = 0.1
    eta: float = 0.01
    spread_init: float = 0.02
    competitor_drift: float = 0.001
    label_plan: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_PLAN))
    start_date: str = "2011-01-03"
    seed: int = 0
    stock_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        for name in ("embed_noise", "market_vol", "cluster_vol", "idio_vol", "eta", "spread_init", "competitor_drift"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.kappa < 1:
            raise ConfigError("kappa must lie in [0, 1)")
        if not 0 <= self.spurious_fraction <= 1:
            raise ConfigError("spurious_fraction must lie in [0, 1]")
        if self.n_stocks < 2 or self.n_days < 2 or self.embed_dim < 1:
            raise ConfigError("need n_stocks >= 2, n_days >= 2 and embed_dim >= 1")
        if not 1 <= self.n_clusters <= self.n_stocks:
            raise ConfigError("n_clusters must lie in [1, n_stocks]")
        unknown = set(self.label_plan) - set(LABELS)
        if unknown:
            raise ConfigError(f"label plan has unknown labels {sorted(unknown)}")
        if any(v < 0 for v in self.label_plan.values()) or abs(sum(self.label_plan.values()) - 1) > 1e-9:
            raise ConfigError("label plan fractions must be non-negative and sum to 1")
        if self.stock_ids is not None:
            ids = tuple(self.stock_ids)
            if len(ids) != self.n_stocks or len(set(ids)) != len(ids):
                raise ConfigError("stock_ids must be n_stocks distinct ids")
            object.__setattr__(self, "stock_ids", ids)
        object.__setattr__(self, "label_plan", {k: float(self.label_plan.get(k, 0.0)) for k in LABELS})

    def ids(self) -> tuple[str, ...]:
        if self.stock_ids is not None:
            return self.stock_ids
        return tuple(f"S{k:03d}" for k in range(self.n_stocks))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label_plan"] = dict(self.label_plan)
        d["stock_ids"] = list(self.stock_ids) if self.stock_ids is not None else None
        return d


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    spec: SynthSpec
    panel: ReturnPanel
    embeddings: EmbeddingSet
    members: MembershipTable
    filings: Mapping[str, str]
    names: Mapping[str, str]
    sic: Mapping[str, str]
    clusters: Mapping[str, int]
    truth: Mapping[tuple[str, str], str]
    spreads: Mapping[tuple[str, str], np.ndarray]

    def snippets(self) -> dict[int, dict[str, FirmSnippets]]:
        """``{vintage year: {stock: FirmSnippets}}``; one extraction reused for every year."""
        everyone = sorted(set(self.names) | set(self.names.values()))
        base = {
            s: extract_snippets(text, firm_names=(s, self.names[s]), other_names=everyone)
            for s, text in self.filings.items()
        }
        return {y: {s: replace(f, fiscal_year=y) for s, f in base.items()} for y in self.embeddings.years}

    def market_data(self) -> MarketData:
        codes = {s: c[:2] for s, c in self.sic.items()}
        return MarketData(
            panel=self.panel,
            members=self.members,
            embeddings=self.embeddings,
            snippets=self.snippets(),
            industry_codes=codes,
            names=sorted(set(self.names.values()) | set(self.panel.stocks)),
        )

    def write(self, out: str | Path) -> dict:
        """Write every input file in its ingestion format plus ``manifest.json``."""
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        self.panel.to_csv(out / "returns.csv")
        self.members.to_csv(out / "membership.csv")
        self.embeddings.to_dir(out / "embeddings")
        for year in self.embeddings.years:
            d = out / "filings" / str(year)
            d.mkdir(parents=True, exist_ok=True)
            for s, text in self.filings.items():
                (d / f"{s}.txt").write_text(text, encoding="utf-8")
        _write_rows(out / "sic.csv", ["stock", "code"], sorted(self.sic.items()))
        _write_rows(out / "names.csv", ["stock", "name"], sorted(self.names.items()))
        _write_rows(out / "truth.csv", ["stock_i", "stock_j", "label"], [(i, j, l) for (i, j), l in sorted(self.truth.items())])

        files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
        manifest = {
            "seed": self.spec.seed,
            "spec": self.spec.to_dict(),
            "files": {
                str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest() for p in files
            },
        }
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return manifest


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _allocate(n: int, plan: Mapping[str, float]) -> list[str]:
    """Largest-remainder allocation of ``n`` slots to labels, in taxonomy order."""
    raw = {k: plan[k] * n for k in LABELS}
    counts = {k: int(np.floor(v)) for k, v in raw.items()}
    rest = n - sum(counts.values())
    for k in sorted(LABELS, key=lambda k: (-(raw[k] - counts[k]), LABELS.index(k)))[:rest]:
        counts[k] += 1
    return [k for k in LABELS for _ in range(counts[k])]


def simulate_spread(n: int, kappa: float, eta: float, s0: float, drift: float, rng) -> np.ndarray:
    """``s_{t+1} = (1 - kappa) s_t + drift + eta * eps_t`` starting at ``s0``."""
    eps = rng.standard_normal(n - 1)
    s = np.empty(n)
    s[0] = s0
    a = 1.0 - kappa
    for t in range(1, n):
        s[t] = a * s[t - 1] + drift + eta * eps[t - 1]
    return s


def generate_universe(spec: SynthSpec) -> SyntheticDataset:
    ids = spec.ids()
    N, T, C, D = spec.n_stocks, spec.n_days, spec.n_clusters, spec.embed_dim

    def stream(*key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([spec.seed, *key]))

    cluster = np.arange(N) * C // N

    # intra-cluster pairs by position, then labels per plan
    pairs = [(a, b) for a in range(N) for b in range(a + 1, N) if cluster[a] == cluster[b]]
    plan_linked = sum(v for k, v in spec.label_plan.items() if k != "unrelated")
    if plan_linked > 0 and not pairs:
        raise ConfigError("label plan requests linked pairs but no cluster holds two stocks")
    order = stream(1).permutation(len(pairs))
    labels = _allocate(len(pairs), spec.label_plan)
    pair_label = {pairs[k]: lab for k, lab in zip(order, labels)}

    # embeddings
    centers = stream(2).standard_normal((C, D))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    emb = np.empty((N, D))
    for k in range(N):
        emb[k] = centers[cluster[k]] + spec.embed_noise * stream(3, k).standard_normal(D) / np.sqrt(D)
    n_spur = int(round(spec.spurious_fraction * N))
    if n_spur and C > 1:
        rng = stream(4)
        for b in rng.choice(N, size=n_spur, replace=False):
            others = np.flatnonzero(cluster != cluster[b])
            a = rng.choice(others)
            emb[b] = emb[a] + 0.01 * spec.embed_noise * rng.standard_normal(D) / np.sqrt(D)
    for k in range(N):
        if not np.linalg.norm(emb[k]) > 0:
            emb[k, 0] = 1.0

    # returns
    market = spec.market_vol * stream(5).standard_normal(T)
    cfac = spec.cluster_vol * stream(6).standard_normal((T, C))
    r = market[:, None] + cfac[:, cluster]
    for k in range(N):
        r[:, k] += spec.idio_vol * stream(7, k).standard_normal(T)

    truth, spreads = {}, {}
    for (a, b), lab in sorted(pair_label.items()):
        edge = canonical(ids[a], ids[b])
        truth[edge] = lab
        if lab == "unrelated":
            continue
        rng = stream(8, a, b)
        if lab == "competitor":
            drift = spec.competitor_drift * (1.0 if rng.random() < 0.5 else -1.0)
            s = simulate_spread(T + 1, 0.0, spec.eta, 0.0, drift, rng)
        else:
            sd0 = spec.eta / np.sqrt(1.0 - (1.0 - spec.kappa) ** 2) if spec.eta > 0 else spec.spread_init
            s = simulate_spread(T + 1, spec.kappa, spec.eta, sd0 * rng.standard_normal(), 0.0, rng)
        # oriented by position so relabeling ids leaves the returns unchanged
        ds = np.diff(s)
        r[:, a] += 0.5 * ds
        r[:, b] -= 0.5 * ds
        spreads[edge] = s if ids[a] == edge[0] else -s
    np.clip(r, -0.95, None, out=r)

    dates = pd.bdate_range(spec.start_date, periods=T).values.astype("datetime64[D]")
    panel = ReturnPanel(dates, ids, r)
    y0 = pd.Timestamp(dates[0]).year - 1
    y1 = pd.Timestamp(dates[-1]).year
    embeddings = EmbeddingSet.from_arrays({y: (ids, emb) for y in range(y0, y1 + 1)})
    start = pd.Timestamp(dates[0]).date()
    end = pd.Timestamp(dates[-1]).date()
    members = MembershipTable.full_span(ids, start, end)

    names = {s: f"{s} Holdings Inc." for s in ids}
    sic = {ids[k]: f"{10 + cluster[k] % 90:02d}{k % 100:02d}" for k in range(N)}
    filings = {
        ids[k]: _filing_text(names[ids[k]], int(cluster[k]), k, ids, pair_label)
        for k in range(N)
    }
    return SyntheticDataset(
        spec=spec,
        panel=panel,
        embeddings=embeddings,
        members=members,
        filings=filings,
        names=names,
        sic=sic,
        clusters={ids[k]: int(cluster[k]) for k in range(N)},
        truth=truth,
        spreads=spreads,
    )


def _filing_text(name: str, cluster: int, k: int, ids, pair_label) -> str:
    industry, seg_a, seg_b = _INDUSTRIES[cluster % len(_INDUSTRIES)]
    lines = [
        f"{name} is a company operating in {industry}.",
        f"Our {seg_a} segment generates most of our revenue, and our {seg_b} products are sold to business customers.",
        f"{name} was founded several decades ago and serves customers in North America and Europe.",
    ]
    seen = set()
    for (a, b), lab in sorted(pair_label.items()):
        if k in (a, b) and lab not in seen and _RELATION_SENTENCES[lab]:
            seen.add(lab)
            lines.append(_RELATION_SENTENCES[lab])
    lines.append(f"We expect demand for {industry} to grow with the broader economy.")
    return "\n".join(lines) + "\n"


def oracle_classifier(dataset: SyntheticDataset) -> MockClient:
    """Client answering every pair with its planted label (``unrelated`` if none)."""
    return MockClient(dict(dataset.truth), default="unrelated")


def load_synth_spec(path: str | Path) -> SynthSpec:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    known = set(SynthSpec.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown synth spec keys: {sorted(unknown)}")
    if raw.get("stock_ids") is not None:
        raw["stock_ids"] = tuple(raw["stock_ids"])
    return SynthSpec(**raw)
