"""Extraction of the three prompt sections from a raw 10-K business section."""

from __future__ import annotations

import functools
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from ..errors import CrossnetError, LoadError

logger = logging.getLogger(__name__)

DEFAULT_BUDGETS = {"business_description": 500, "segments": 500, "competitors": 500}

SEGMENT_KEYWORDS = (
    "segment",
    "segments",
    "product",
    "products",
    "product line",
    "service",
    "services",
    "brand",
    "brands",
)

# Sentences around "compete with" and its usual variants in Item 1.
COMPETE_PATTERNS = (
    r"\bcompet(?:e|es|ed|ing)\s+(?:\w+\s+){0,2}?(?:with|against)\b",
    r"\b(?:principal|primary|main|major|key|significant)\s+competitors?\b",
    r"\bcompetitors?\s+(?:include|includes|included|are|such\s+as)\b",
    r"\bcompetition\s+(?:from|with)\b",
)

ANON_REPLACEMENT = "the Company"

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class FirmSnippets:
    business_description: str
    segments: str
    competitor_sentences: str
    fiscal_year: int | None = None
    # identifiers that must never reach a prompt
    firm_names: tuple[str, ...] = ()


def whitespace_tokens(text: str) -> list[str]:
    return text.split()


def truncate_tokens(text: str, budget: int) -> str:
    return " ".join(whitespace_tokens(text)[:budget])


def split_sentences(text: str) -> list[str]:
    flat = " ".join(text.split())
    return [s for s in _SENTENCE_END.split(flat) if s]


def anonymize(text: str, names: Sequence[str]) -> str:
    """Replace whole-word occurrences of ``names`` with a neutral phrase.

    Names of at most two characters (tickers) match case-sensitively, longer
    names case-insensitively, mirroring the prompt's leak check.
    """
    exact, folded = _name_patterns(tuple(sorted({n for n in names if n})))
    for pat in (folded, exact):
        if pat is not None:
            text = pat.sub(ANON_REPLACEMENT, text)
    return text


@functools.lru_cache(maxsize=256)
def _name_patterns(names: tuple[str, ...]):
    def compile_(group, flags):
        if not group:
            return None
        alt = "|".join(re.escape(n) for n in sorted(group, key=len, reverse=True))
        return re.compile(rf"(?<!\w)(?:{alt})(?!\w)", flags)

    return compile_([n for n in names if len(n) <= 2], 0), compile_([n for n in names if len(n) > 2], re.I)


def extract_snippets(
    filing_text: str,
    budgets: Mapping[str, int] | None = None,
    *,
    fiscal_year: int | None = None,
    firm_names: Sequence[str] = (),
    other_names: Sequence[str] = (),
    segment_keywords: Sequence[str] = SEGMENT_KEYWORDS,
    compete_patterns: Sequence[str] = COMPETE_PATTERNS,
) -> FirmSnippets:
    """Build :class:`FirmSnippets` from the Item 1 text of one filing.

    The description is the first ``budgets["business_description"]`` whitespace
    tokens. Segment and competitor sections collect matching sentences, then
    truncate to their own budgets. ``firm_names`` (this firm) and
    ``other_names`` (e.g. every other firm in the universe) are replaced
    before extraction.
    """
    if not filing_text or not filing_text.strip():
        raise CrossnetError("empty filing text")
    b = dict(DEFAULT_BUDGETS)
    if budgets:
        unknown = set(budgets) - set(b)
        if unknown:
            raise CrossnetError(f"unknown snippet budget keys: {sorted(unknown)}")
        b.update(budgets)

    text = anonymize(filing_text, [*firm_names, *other_names])
    sentences = split_sentences(text)

    kw = re.compile(
        r"\b(?:" + "|".join(re.escape(k) for k in segment_keywords) + r")\b", re.I
    )
    compete = [re.compile(p, re.I) for p in compete_patterns]
    seg = [s for s in sentences if kw.search(s)]
    comp = [s for s in sentences if any(p.search(s) for p in compete)]

    return FirmSnippets(
        business_description=truncate_tokens(text, b["business_description"]),
        segments=truncate_tokens(" ".join(seg), b["segments"]),
        competitor_sentences=truncate_tokens(" ".join(comp), b["competitors"]),
        fiscal_year=fiscal_year,
        firm_names=tuple(firm_names),
    )


class SnippetStore:
    """Lazy view over ``filings/<year>/<stock>.txt``.

    Snippets are extracted on first access and memoized. ``names`` maps a
    stock id to its firm names. Every id and name in the store is scrubbed
    from every filing, so rivals named in a filing never reach a prompt.
    """

    def __init__(
        self,
        root: str | Path,
        budgets: Mapping[str, int] | None = None,
        names: Mapping[str, Sequence[str]] | None = None,
    ):
        self.root = Path(root)
        self.budgets = budgets
        self.names = dict(names or {})
        self._memo: dict[tuple[str, int], FirmSnippets | None] = {}
        self._all: tuple[str, ...] | None = None

    def all_names(self) -> tuple[str, ...]:
        if self._all is None:
            out = set()
            for stock, extra in self.names.items():
                out.add(stock)
                out.update(extra)
            self._all = tuple(sorted(out))
        return self._all

    def get(self, stock: str, year: int) -> FirmSnippets | None:
        key = (stock, year)
        if key not in self._memo:
            path = self.root / str(year) / f"{stock}.txt"
            if not path.exists():
                self._memo[key] = None
            else:
                text = path.read_text(encoding="utf-8")
                try:
                    self._memo[key] = extract_snippets(
                        text,
                        self.budgets,
                        fiscal_year=year,
                        firm_names=(stock, *self.names.get(stock, ())),
                        other_names=self.all_names(),
                    )
                except CrossnetError as exc:
                    logger.warning("filing %s unusable: %s", path, exc)
                    self._memo[key] = None
        return self._memo[key]

    def for_year(self, year: int) -> "YearView":
        return YearView(self, year)


class YearView(Mapping):
    """Read-only ``stock -> FirmSnippets`` mapping for one fiscal year."""

    def __init__(self, store: SnippetStore, year: int):
        self._store = store
        self._year = year

    def __getitem__(self, stock):
        snip = self._store.get(stock, self._year)
        if snip is None:
            raise KeyError(stock)
        return snip

    def __iter__(self):
        d = self._store.root / str(self._year)
        return iter(sorted(p.stem for p in d.glob("*.txt"))) if d.is_dir() else iter(())

    def __len__(self):
        return sum(1 for _ in self)


def load_firm_names(path: str | Path) -> dict[str, list[str]]:
    """Optional ``names.csv``: ``stock,name`` rows, several rows per stock allowed."""
    import csv

    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    out: dict[str, list[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["stock"].strip(), []).append(row["name"].strip())
    return out
