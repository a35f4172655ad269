"""Edge classification, relation filtering and relation weights."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from ..errors import BudgetExceeded, ConfigError, CrossnetError, ParseError
from ..graph import CandidateGraph
from .cache import ClassificationCache
from .clients import ClassificationRequest
from .prompt import LABELS, TEMPLATE_VERSION, build_prompt
from .snippets import FirmSnippets

logger = logging.getLogger(__name__)

Edge = tuple[str, str]

# Competitor and unrelated edges are removed, substitutes are down-weighted.
DEFAULT_RELATION_WEIGHTS = {
    "competitor": 0.0,
    "supply_chain": 1.0,
    "complementary": 1.0,
    "substitute": 0.5,
    "peer": 1.0,
    "unrelated": 0.0,
}

FALLBACK_LABEL = "unrelated"


@dataclass(frozen=True)
class EdgeClassification:
    edge: Edge | None
    label: str
    evidence_a: str = ""
    evidence_b: str = ""
    source: str = field(default="live", compare=False)

    def __post_init__(self):
        if self.label not in LABELS:
            raise ParseError(f"unknown label {self.label!r}")
        if self.label != "unrelated" and not (self.evidence_a.strip() and self.evidence_b.strip()):
            raise ParseError(f"label {self.label!r} requires evidence from both firms")


def _first_json_object(raw: str) -> dict | None:
    decoder = json.JSONDecoder()
    start = raw.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(raw, start)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return obj
        start = raw.find("{", start + 1)
    return None


def parse_classification(raw: str) -> EdgeClassification:
    """Parse the first JSON object in a classifier response.

    Labels are matched case-insensitively, with spaces and hyphens read as
    underscores. Errors carry the raw text on ``ParseError.raw``.
    """
    obj = _first_json_object(raw or "")
    if obj is None:
        raise ParseError("no JSON object in response", raw)
    if "label" not in obj or not isinstance(obj["label"], str):
        raise ParseError("response JSON has no string 'label'", raw)
    label = obj["label"].strip().lower().replace(" ", "_").replace("-", "_")
    if label not in LABELS:
        raise ParseError(f"unknown label {obj['label']!r}", raw)
    ev_a = obj.get("evidence_span_A") or ""
    ev_b = obj.get("evidence_span_B") or ""
    try:
        return EdgeClassification(None, label, str(ev_a), str(ev_b))
    except ParseError as exc:
        raise ParseError(str(exc), raw) from None


class CallBudget:
    """Hard cap on live classifier calls, shared across a run."""

    def __init__(self, limit: int | None):
        self.limit = limit
        self.used = 0

    @property
    def remaining(self) -> float:
        return math.inf if self.limit is None else self.limit - self.used


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    graph: CandidateGraph
    year: int
    classifications: tuple[EdgeClassification, ...]
    stats: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledGraph):
            return NotImplemented
        return (
            self.graph == other.graph
            and self.year == other.year
            and self.classifications == other.classifications
        )

    @property
    def labels(self) -> dict[Edge, str]:
        return {c.edge: c.label for c in self.classifications}

    def histogram(self) -> dict[str, int]:
        h = dict.fromkeys(LABELS, 0)
        for c in self.classifications:
            h[c.label] += 1
        return h


def _call_with_retries(client, request, retries: int, backoff: float) -> EdgeClassification | None:
    for attempt in range(retries + 1):
        try:
            return parse_classification(client(request))
        except ConfigError:
            raise
        except ParseError as exc:
            logger.warning("pair %s: unparseable response (%s): %.200r", request.pair, exc, exc.raw)
        except Exception as exc:  # noqa: BLE001 - any client failure is retried, then fails closed
            logger.warning("pair %s: client error on attempt %d: %s", request.pair, attempt + 1, exc)
        if attempt < retries and backoff > 0:
            time.sleep(backoff * 2**attempt)
    return None


def classify_edges(
    graph: CandidateGraph,
    snippets: Mapping[str, FirmSnippets],
    client: Callable[[ClassificationRequest], str],
    cache: ClassificationCache | None,
    year: int,
    *,
    retries: int = 3,
    backoff: float = 0.5,
    parallelism: int = 1,
    budget: CallBudget | None = None,
    names: Sequence[str] = (),
) -> LabeledGraph:
    """Label every candidate edge, using the cache before the client.

    ``year`` is the vintage (fiscal) year of the filings. Edges whose
    snippets are missing, or whose client calls fail after ``retries``
    retries, fall back to ``unrelated`` and are not cached. If the budget
    cannot cover all uncached edges, the affordable prefix (in canonical edge
    order) is classified and cached, then :class:`BudgetExceeded` is raised.
    """
    if cache is None:
        cache = ClassificationCache()
    results: dict[Edge, EdgeClassification] = {}
    todo: list[tuple[Edge, ClassificationRequest]] = []
    stats = {"edges": len(graph.edges), "cache_hits": 0, "live_calls": 0, "fallbacks": 0}

    for e in graph.edges:
        rec = cache.get(e, year, TEMPLATE_VERSION)
        if rec is not None:
            results[e] = EdgeClassification(e, rec["label"], rec["evidence_a"], rec["evidence_b"], "cache")
            stats["cache_hits"] += 1
            continue
        a, b = snippets.get(e[0]), snippets.get(e[1])
        if a is None or b is None:
            logger.warning("pair %s: missing snippets, labeled %s", e, FALLBACK_LABEL)
            results[e] = EdgeClassification(e, FALLBACK_LABEL, source="fallback")
            stats["fallbacks"] += 1
            continue
        todo.append((e, ClassificationRequest(build_prompt(a, b, year + 1, names), e, year)))

    if budget is None:
        budget = CallBudget(None)
    exceeded = len(todo) > budget.remaining
    if exceeded:
        todo = todo[: int(budget.remaining)]
    budget.used += len(todo)
    stats["live_calls"] = len(todo)

    def work(item):
        return _call_with_retries(client, item[1], retries, backoff)

    if parallelism > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            answers = list(pool.map(work, todo))
    else:
        answers = [work(item) for item in todo]

    # single writer, canonical order
    for (e, _), ans in zip(todo, answers):
        if ans is None:
            logger.warning("pair %s: retries exhausted, labeled %s", e, FALLBACK_LABEL)
            results[e] = EdgeClassification(e, FALLBACK_LABEL, source="fallback")
            stats["fallbacks"] += 1
            continue
        results[e] = EdgeClassification(e, ans.label, ans.evidence_a, ans.evidence_b, "live")
        cache.put(e, year, TEMPLATE_VERSION, ans.label, ans.evidence_a, ans.evidence_b)

    if exceeded:
        raise BudgetExceeded(
            f"call budget of {budget.limit} exhausted; "
            f"{len(graph.edges) - len(results)} edges left unclassified"
        )
    classifications = tuple(results[e] for e in graph.edges)
    return LabeledGraph(graph, year, classifications, stats)


def validate_weight_table(weights: Mapping[str, float]) -> dict[str, float]:
    unknown = set(weights) - set(LABELS)
    if unknown:
        raise ConfigError(f"relation weights for unknown labels: {sorted(unknown)}")
    missing = set(LABELS) - set(weights)
    if missing:
        raise ConfigError(f"relation weight table lacks labels: {sorted(missing)}")
    out = {}
    for label in LABELS:
        w = float(weights[label])
        if not math.isfinite(w) or w < 0:
            raise ConfigError(f"relation weight for {label} must be finite and >= 0, got {w}")
        out[label] = w
    return out


@dataclass(frozen=True)
class RefinedGraph:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    labels: Mapping[Edge, str | None]
    weights: Mapping[Edge, float]

    def __post_init__(self):
        for e in self.edges:
            if not self.weights[e] > 0:
                raise CrossnetError(f"refined edge {e} has non-positive weight")

    @classmethod
    def unfiltered(cls, graph: CandidateGraph) -> RefinedGraph:
        """All candidate edges with unit weight and no label."""
        return cls(graph.nodes, graph.edges, dict.fromkeys(graph.edges), dict.fromkeys(graph.edges, 1.0))

    def without(self, drop) -> RefinedGraph:
        drop = set(drop)
        keep = tuple(e for e in self.edges if e not in drop)
        return RefinedGraph(
            self.nodes, keep, {e: self.labels[e] for e in keep}, {e: self.weights[e] for e in keep}
        )


def apply_relation_filter(labeled: LabeledGraph, weights: Mapping[str, float] | None = None) -> RefinedGraph:
    """Attach relation weights and drop every edge whose weight is zero."""
    table = validate_weight_table(DEFAULT_RELATION_WEIGHTS if weights is None else weights)
    labels = labeled.labels
    keep = tuple(e for e in labeled.graph.edges if table[labels[e]] > 0)
    return RefinedGraph(
        labeled.graph.nodes,
        keep,
        {e: labels[e] for e in keep},
        {e: table[labels[e]] for e in keep},
    )
