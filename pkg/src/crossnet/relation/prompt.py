"""Edge-classification prompt.

The template wording is fixed; any edit must bump ``TEMPLATE_VERSION`` since
the version participates in the classification cache key.
"""

from __future__ import annotations

import functools
import re
from typing import Sequence

from ..errors import AnonymizationError
from .snippets import FirmSnippets

TEMPLATE_VERSION = "edge-classify-v1"

LABELS = ("competitor", "supply_chain", "complementary", "substitute", "peer", "unrelated")

EMPTY_SECTION = "(none)"

TEMPLATE = """\
You are an industry analyst. Based ONLY on the two company disclosures below,
(both filed before <END_OF_YEAR>), classify their economic relationship.

=== Firm A (Fiscal Year <FY>) ===
Business description:
<A_DESCRIPTION>

Key products/segments:
<A_SEGMENTS>

Competitors mentioned:
<A_COMPETITORS>

=== Firm B (Fiscal Year <FY>) ===
Business description:
<B_DESCRIPTION>

Key products/segments:
<B_SEGMENTS>

Competitors mentioned:
<B_COMPETITORS>

Choose exactly one label from:
[competitor, supply_chain, complementary, substitute, peer, unrelated]

Return JSON:
{"label": "...", "evidence_span_A": "...", "evidence_span_B": "..."}
"""


def _section(text: str) -> str:
    return text if text.strip() else EMPTY_SECTION


def find_identifiers(text: str, names: Sequence[str]) -> list[str]:
    """Names from ``names`` that occur in ``text`` as whole words.

    Matching is case-insensitive except for names of at most two characters,
    which are usually tickers and collide with ordinary words otherwise.
    """
    exact, folded = _identifier_patterns(tuple(sorted({n for n in names if n})))
    hits = set()
    if exact is not None:
        hits.update(m.group(1) for m in exact.finditer(text))
    if folded is not None:
        lower = {n.lower(): n for n in names if len(n) > 2}
        hits.update(lower[m.group(1).lower()] for m in folded.finditer(text))
    return sorted(hits)


@functools.lru_cache(maxsize=64)
def _identifier_patterns(names: tuple[str, ...]):
    def compile_(group, flags):
        if not group:
            return None
        alt = "|".join(re.escape(n) for n in sorted(group, key=len, reverse=True))
        return re.compile(rf"(?<!\w)({alt})(?!\w)", flags)

    return (
        compile_([n for n in names if len(n) <= 2], 0),
        compile_([n for n in names if len(n) > 2], re.I),
    )


def build_prompt(a: FirmSnippets, b: FirmSnippets, year: int, names: Sequence[str] = ()) -> str:
    """Prompt for classifying firms ``a`` (Firm A) and ``b`` (Firm B).

    ``year`` is the year whose windows use these filings; the prompt refers
    to fiscal year ``year - 1``. Raises :class:`AnonymizationError` if any
    snippet still contains a firm identifier from either firm or from ``names``.
    """
    blocked = sorted(set(a.firm_names) | set(b.firm_names) | set(names))
    for tag, snip in (("A", a), ("B", b)):
        body = "\n".join((snip.business_description, snip.segments, snip.competitor_sentences))
        hits = find_identifiers(body, blocked)
        if hits:
            raise AnonymizationError(f"Firm {tag} snippets contain identifiers: {', '.join(hits)}")

    fy = year - 1
    subs = {
        "<END_OF_YEAR>": f"December 31, {fy}",
        "<FY>": str(fy),
        "<A_DESCRIPTION>": _section(a.business_description),
        "<A_SEGMENTS>": _section(a.segments),
        "<A_COMPETITORS>": _section(a.competitor_sentences),
        "<B_DESCRIPTION>": _section(b.business_description),
        "<B_SEGMENTS>": _section(b.segments),
        "<B_COMPETITORS>": _section(b.competitor_sentences),
    }
    pattern = re.compile("|".join(re.escape(k) for k in subs))
    return pattern.sub(lambda m: subs[m.group(0)], TEMPLATE)
