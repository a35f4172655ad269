"""Loading and validation of the return panel, index membership and embeddings.

All containers are immutable after construction: their numpy buffers are
marked read-only, so they can be shared between worker threads.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import LoadError, UniverseError
from .signal import WindowSpec

logger = logging.getLogger(__name__)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise LoadError(f"invalid ISO date {text!r} at {where}") from None


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    """Dates x stocks matrix of daily simple returns; NaN marks a missing cell."""

    dates: np.ndarray
    stocks: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        values = np.array(self.values, dtype=float)
        if values.shape != (len(dates), len(self.stocks)):
            raise LoadError(
                f"values shape {values.shape} does not match "
                f"{len(dates)} dates x {len(self.stocks)} stocks"
            )
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            raise LoadError("dates must be strictly increasing")
        if len(set(self.stocks)) != len(self.stocks):
            raise LoadError("duplicate stock id in panel")
        bad = ~np.isnan(values) & (values <= -1.0)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise LoadError(f"return <= -1 at ({dates[r]}, {self.stocks[c]})")
        object.__setattr__(self, "dates", _readonly(dates))
        object.__setattr__(self, "stocks", tuple(self.stocks))
        object.__setattr__(self, "values", _readonly(values))

    @property
    def mask(self) -> np.ndarray:
        """Boolean matrix, True where the return is missing."""
        return np.isnan(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def date_index(self, date) -> int:
        d = np.datetime64(date, "D")
        i = int(np.searchsorted(self.dates, d))
        if i >= len(self.dates) or self.dates[i] != d:
            raise KeyError(f"{date} is not a trading date of this panel")
        return i

    def column(self, stock: str) -> np.ndarray:
        return self.values[:, self.stocks.index(stock)]

    def subset(self, stocks: Sequence[str], start: int = 0, stop: int | None = None) -> ReturnPanel:
        """Rows ``start:stop`` restricted to ``stocks`` (in the given order)."""
        pos = {s: k for k, s in enumerate(self.stocks)}
        cols = [pos[s] for s in stocks]
        return ReturnPanel(self.dates[start:stop], tuple(stocks), self.values[start:stop][:, cols])

    def equals(self, other: ReturnPanel) -> bool:
        """Bitwise equality of dates, ids, values and missing masks."""
        return (
            self.stocks == other.stocks
            and np.array_equal(self.dates, other.dates)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(
                self.values.view(np.uint64)[~self.mask], other.values.view(np.uint64)[~other.mask]
            )
        )

    def to_csv(self, path: str | Path) -> None:
        """Write in the ``returns.csv`` layout. Floats use ``repr`` so a reload is exact."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", *self.stocks])
            for d, row in zip(self.dates, self.values):
                w.writerow([str(d)] + ["" if math.isnan(v) else repr(float(v)) for v in row])


def load_returns(path: str | Path) -> ReturnPanel:
    """Read ``returns.csv``: ISO date column followed by one column per stock id.

    Blank cells become missing. Rows are sorted by date.
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise LoadError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    stocks = [h.strip() for h in header[1:]]
    if not stocks:
        raise LoadError(f"{path}: header names no stock columns")
    if len(set(stocks)) != len(stocks):
        raise LoadError(f"{path}: duplicate stock column in header")

    dates: list[dt.date] = []
    values = np.empty((len(body), len(stocks)))
    seen: set[dt.date] = set()
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise LoadError(f"{path}:{r}: expected {len(header)} cells, got {len(row)}")
        d = _parse_date(row[0], f"{path}:{r}")
        if d in seen:
            raise LoadError(f"{path}:{r}: duplicate date {d}")
        seen.add(d)
        dates.append(d)
        for c, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "":
                values[r - 2, c] = np.nan
                continue
            try:
                v = float(cell)
            except ValueError:
                raise LoadError(f"non-numeric cell {cell!r} at ({d}, {stocks[c]})") from None
            if not math.isfinite(v):
                raise LoadError(f"non-finite cell {cell!r} at ({d}, {stocks[c]})")
            if v <= -1.0:
                raise LoadError(f"return <= -1 at ({d}, {stocks[c]})")
            values[r - 2, c] = v

    order = np.argsort(np.array(dates, dtype="datetime64[D]"), kind="stable")
    return ReturnPanel(
        np.array(dates, dtype="datetime64[D]")[order], tuple(stocks), values[order]
    )


@dataclass(frozen=True)
class MembershipTable:
    """Index-membership intervals, inclusive on both ends."""

    entries: tuple[tuple[str, dt.date, dt.date], ...]

    def __post_init__(self):
        by_stock: dict[str, list[tuple[dt.date, dt.date]]] = {}
        for stock, start, end in self.entries:
            if start > end:
                raise LoadError(f"membership interval for {stock} starts after it ends")
            by_stock.setdefault(stock, []).append((start, end))
        for stock, spans in by_stock.items():
            spans.sort()
            for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
                if s1 <= e0:
                    raise LoadError(f"overlapping membership intervals for {stock}")
        object.__setattr__(self, "_spans", {k: tuple(v) for k, v in by_stock.items()})

    @classmethod
    def full_span(cls, stocks: Iterable[str], start: dt.date, end: dt.date) -> MembershipTable:
        return cls(tuple((s, start, end) for s in stocks))

    def is_member(self, stock: str, date) -> bool:
        date = _as_date(date)
        return any(s <= date <= e for s, e in self._spans.get(stock, ()))

    def members_on(self, date) -> set[str]:
        date = _as_date(date)
        return {k for k, spans in self._spans.items() if any(s <= date <= e for s, e in spans)}

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stock", "start", "end"])
            for stock, start, end in self.entries:
                w.writerow([stock, start.isoformat(), end.isoformat()])


def _as_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(np.datetime64(value, "D")))


def load_membership(path: str | Path) -> MembershipTable:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"stock", "start", "end"} - set(reader.fieldnames or [])
        if missing:
            raise LoadError(f"{path}: missing columns {sorted(missing)}")
        for r, row in enumerate(reader, start=2):
            entries.append(
                (
                    row["stock"].strip(),
                    _parse_date(row["start"], f"{path}:{r}"),
                    _parse_date(row["end"], f"{path}:{r}"),
                )
            )
    return MembershipTable(tuple(entries))


@dataclass(frozen=True, eq=False)
class VintageEmbeddings:
    """Embeddings of one vintage year: row ``k`` of ``vectors`` belongs to ``stocks[k]``."""

    year: int
    stocks: tuple[str, ...]
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def matrix(self, stocks: Sequence[str]) -> np.ndarray:
        pos = {s: k for k, s in enumerate(self.stocks)}
        return self.vectors[[pos[s] for s in stocks]]

    def __contains__(self, stock: str) -> bool:
        return stock in self._index

    @property
    def _index(self) -> frozenset:
        return frozenset(self.stocks)


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    vintages: Mapping[int, VintageEmbeddings]
    dropped: int = 0

    @classmethod
    def from_arrays(
        cls, data: Mapping[int, tuple[Sequence[str], np.ndarray]]
    ) -> EmbeddingSet:
        """Build from ``{year: (stock ids, matrix)}``, dropping zero-norm rows."""
        vintages = {}
        dropped = 0
        for year, (stocks, mat) in sorted(data.items()):
            mat = np.array(mat, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != len(stocks):
                raise LoadError(f"vintage {year}: matrix shape {mat.shape} vs {len(stocks)} ids")
            keep = np.linalg.norm(mat, axis=1) > 0
            dropped += int((~keep).sum())
            ids = tuple(s for s, k in zip(stocks, keep) if k)
            vintages[int(year)] = VintageEmbeddings(int(year), ids, _readonly(mat[keep]))
        if dropped:
            logger.warning("dropped %d zero-norm embedding rows", dropped)
        return cls(vintages, dropped)

    def vintage(self, year: int) -> VintageEmbeddings | None:
        return self.vintages.get(year)

    @property
    def years(self) -> list[int]:
        return sorted(self.vintages)

    def to_dir(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for year, v in self.vintages.items():
            with open(path / f"{year}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["stock"] + [f"v{k + 1}" for k in range(v.dim)])
                for stock, row in zip(v.stocks, v.vectors):
                    w.writerow([stock] + [repr(float(x)) for x in row])


def load_embeddings(path: str | Path) -> EmbeddingSet:
    """Read ``<dir>/<year>.csv`` files of ``stock, v1..vD`` rows.

    The dimension must be constant within a file but may differ between vintages.
    """
    path = Path(path)
    if not path.is_dir():
        raise LoadError(f"{path}: not a directory")
    data = {}
    for f in sorted(path.glob("*.csv")):
        try:
            year = int(f.stem)
        except ValueError:
            raise LoadError(f"{f}: file name is not a vintage year") from None
        with open(f, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if rows and rows[0] and not _is_float(rows[0][1] if len(rows[0]) > 1 else ""):
            rows = rows[1:]
        ids, vecs = [], []
        dim = None
        for r, row in enumerate(rows, start=1):
            if dim is None:
                dim = len(row) - 1
            if len(row) - 1 != dim or dim < 1:
                raise LoadError(f"{f}: row {r} has {len(row) - 1} components, expected {dim}")
            try:
                vecs.append([float(x) for x in row[1:]])
            except ValueError:
                raise LoadError(f"{f}: non-numeric component in row {r}") from None
            ids.append(row[0].strip())
        if len(set(ids)) != len(ids):
            raise LoadError(f"{f}: duplicate stock id")
        data[year] = (ids, np.array(vecs, dtype=float).reshape(len(ids), dim or 0))
    if not data:
        raise LoadError(f"{path}: no <year>.csv files")
    return EmbeddingSet.from_arrays(data)


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True, eq=False)
class UniverseSlice:
    """Eligible universe for one window.

    ``panel`` covers ``t0..t2`` for the eligible stocks only; test-period gaps
    have been zero-filled and counted in ``fill_count``.
    """

    window: WindowSpec
    eligible: tuple[str, ...]
    panel: ReturnPanel
    vintage: int
    fill_count: int = 0
    excluded: dict = field(default_factory=dict)

    @property
    def train_returns(self) -> np.ndarray:
        return self.panel.values[: self.window.train_len]

    @property
    def test_returns(self) -> np.ndarray:
        return self.panel.values[self.window.train_len :]


def embedding_vintage(window: WindowSpec) -> int:
    """Vintage used for a window: year of the training start minus one."""
    return window.t0.year - 1


def slice_universe(
    panel: ReturnPanel,
    members: MembershipTable,
    emb: EmbeddingSet,
    window: WindowSpec,
    groups: int = 5,
) -> UniverseSlice:
    """Eligible stocks for ``window`` and their returns over ``t0..t2``.

    A stock is eligible if it is an index member on ``t0``, has an embedding in
    the vintage of the year before ``t0``, and has no missing training return.
    """
    try:
        i0 = panel.date_index(window.t0)
        i2 = panel.date_index(window.t2)
    except KeyError as exc:
        raise UniverseError(str(exc)) from None
    i1 = i0 + window.train_len - 1
    if i2 - i0 + 1 != window.train_len + window.test_len or panel.dates[i1] != np.datetime64(window.t1):
        raise UniverseError("window does not match the panel calendar")

    year = embedding_vintage(window)
    vint = emb.vintage(year)
    embedded = set(vint.stocks) if vint is not None else set()
    members_t0 = members.members_on(window.t0)
    complete = ~panel.mask[i0 : i1 + 1].any(axis=0)

    excluded = {"not_member": 0, "no_embedding": 0, "incomplete": 0}
    eligible = []
    for k, stock in enumerate(panel.stocks):
        if stock not in members_t0:
            excluded["not_member"] += 1
        elif stock not in embedded:
            excluded["no_embedding"] += 1
        elif not complete[k]:
            excluded["incomplete"] += 1
        else:
            eligible.append(stock)
    eligible.sort()
    if len(eligible) < 2 * groups:
        raise UniverseError(
            f"universe too small for {groups} groups: {len(eligible)} eligible stocks"
        )

    sub = panel.subset(eligible, i0, i2 + 1)
    vals = np.array(sub.values)
    gaps = np.isnan(vals)
    fill_count = int(gaps.sum())
    if fill_count:
        vals[gaps] = 0.0
        logger.info("window %d: zero-filled %d missing test returns", window.index, fill_count)
    return UniverseSlice(
        window=window,
        eligible=tuple(eligible),
        panel=ReturnPanel(sub.dates, sub.stocks, vals),
        vintage=year,
        fill_count=fill_count,
        excluded=excluded,
    )
