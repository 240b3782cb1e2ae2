"""Tick ingestion: parse trade prints and aggregate them into activity series.

Trades are binned on a regular grid over the 390-minute regular session
(09:30-16:00 exchange-local). Every bin of the grid is materialized, including
bins with no trades, so downstream growth-rate and DFA code can rely on a
regular time axis.
"""
from __future__ import annotations

import csv
import gzip
import logging
import math
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, time
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._csvio import write_csv
from ._numeric import line_fit

logger = logging.getLogger(__name__)

SESSION_OPEN = time(9, 30)
SESSION_MINUTES = 390
_OPEN_SECONDS = 9 * 3600 + 30 * 60
_SESSION_SECONDS = SESSION_MINUTES * 60


class ParseError(ValueError):
    """Fatal problem in a trade file; carries the offending line number."""

    def __init__(self, message: str, line: int, source: str = "<stream>"):
        super().__init__(f"{source}:{line}: {message}")
        self.line = line
        self.source = source


class CalendarError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class TradeRecord:
    timestamp: datetime
    symbol: str
    price: float
    shares: int

    @property
    def value(self) -> float:
        return self.price * self.shares


_INTERVAL_RE = re.compile(r"^\s*(\d+)\s*(m|min|mins|minute|minutes|d|day|days)\s*$", re.I)


@dataclass(frozen=True)
class SamplingInterval:
    """Aggregation bin width: ``minutes`` for intraday, ``days`` for multi-day.

    Exactly one of the two is nonzero. Intraday lengths must divide the
    390-minute session.
    """

    minutes: int = 0
    days: int = 0

    def __post_init__(self):
        if (self.minutes > 0) == (self.days > 0) or self.minutes < 0 or self.days < 0:
            raise ValueError("exactly one of minutes/days must be positive")
        if self.minutes and SESSION_MINUTES % self.minutes:
            raise ValueError(
                f"intraday interval of {self.minutes} min does not divide the "
                f"{SESSION_MINUTES}-minute session"
            )

    @classmethod
    def parse(cls, text: str) -> "SamplingInterval":
        """Parse labels such as ``5m``, ``30min``, ``1d`` or ``20d``."""
        m = _INTERVAL_RE.match(text)
        if not m:
            raise ValueError(f"unrecognized sampling interval {text!r}")
        n = int(m.group(1))
        if m.group(2).lower().startswith("m"):
            return cls(minutes=n)
        return cls(days=n)

    @property
    def kind(self) -> str:
        return "intraday" if self.minutes else "multi-day"

    @property
    def is_intraday(self) -> bool:
        return self.minutes > 0

    @property
    def bins_per_session(self) -> int | None:
        return SESSION_MINUTES // self.minutes if self.minutes else None

    @property
    def label(self) -> str:
        return f"{self.minutes}m" if self.minutes else f"{self.days}d"

    @property
    def length_minutes(self) -> int:
        """Nominal length in session minutes (a day counts 390)."""
        return self.minutes or self.days * SESSION_MINUTES

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class TradeSchema:
    """Column layout of a trade file.

    ``header=None`` auto-detects a header by checking whether the first
    non-blank row has a parseable timestamp.
    """

    delimiter: str = ","
    columns: tuple[str, ...] = ("timestamp", "symbol", "price", "shares")
    header: bool | None = None

    def __post_init__(self):
        missing = {"timestamp", "symbol", "price", "shares"} - set(self.columns)
        if missing:
            raise ValueError(f"schema lacks required columns: {sorted(missing)}")


@dataclass
class ParseResult:
    records: list[TradeRecord]
    malformed: int = 0
    out_of_session: int = 0
    malformed_lines: list[int] = field(default_factory=list)


def _seconds_into_session(ts: datetime) -> float:
    return (ts.hour * 3600 + ts.minute * 60 + ts.second + ts.microsecond * 1e-6) - _OPEN_SECONDS


def in_session(ts: datetime) -> bool:
    """True for 09:30:00 <= time <= 16:00:00 (the closing print is kept)."""
    s = _seconds_into_session(ts)
    return 0.0 <= s <= _SESSION_SECONDS


def parse_trades(
    lines: Iterable[str],
    schema: TradeSchema = TradeSchema(),
    out_of_session: str = "drop",
    source: str = "<stream>",
) -> ParseResult:
    """Parse delimited trade rows into :class:`TradeRecord` objects.

    Rows with the wrong number of fields or unparseable fields abort with
    :class:`ParseError`. Rows that parse but violate the record invariants
    (non-positive price or shares) are dropped and counted as malformed.
    Rows outside the regular session are dropped and counted, or abort the
    parse when ``out_of_session == "reject"``.
    """
    if out_of_session not in ("drop", "reject"):
        raise ValueError("out_of_session must be 'drop' or 'reject'")
    cols = {name: i for i, name in enumerate(schema.columns)}
    it, ip, iq, isym = cols["timestamp"], cols["price"], cols["shares"], cols["symbol"]
    ncols = len(schema.columns)
    result = ParseResult(records=[])
    first = True
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(schema.delimiter)
        if len(parts) != ncols:
            if first and schema.header:
                first = False
                continue
            raise ParseError(f"expected {ncols} fields, got {len(parts)}", lineno, source)
        if first:
            first = False
            if schema.header:
                continue
            if schema.header is None:
                try:
                    datetime.fromisoformat(parts[it].strip())
                except ValueError:
                    continue
        try:
            ts = datetime.fromisoformat(parts[it].strip())
        except ValueError:
            raise ParseError(f"bad timestamp {parts[it].strip()!r}", lineno, source) from None
        if ts.tzinfo is not None:
            ts = ts.replace(tzinfo=None)
        symbol = parts[isym].strip()
        try:
            price = float(parts[ip])
            shares = int(parts[iq])
        except ValueError:
            raise ParseError("non-numeric price or shares", lineno, source) from None
        if not symbol or not math.isfinite(price) or price <= 0 or shares <= 0:
            result.malformed += 1
            result.malformed_lines.append(lineno)
            continue
        if not in_session(ts):
            if out_of_session == "reject":
                raise ParseError(f"timestamp {ts.isoformat()} outside regular session", lineno, source)
            result.out_of_session += 1
            continue
        result.records.append(TradeRecord(ts, symbol, price, shares))
    return result


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8", newline="")
    return open(path, "r", encoding="utf-8", newline="")


def read_trades(path, schema: TradeSchema = TradeSchema(), out_of_session: str = "drop") -> ParseResult:
    """Parse a (possibly gzip-compressed) trade file."""
    path = Path(path)
    with _open_text(path) as fh:
        return parse_trades(fh, schema, out_of_session, source=str(path))


def read_calendar(path) -> list[date]:
    """Read session dates, one ISO date per line; must be strictly increasing."""
    dates = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                dates.append(date.fromisoformat(line))
            except ValueError:
                raise CalendarError(f"{path}:{lineno}: bad date {line!r}") from None
    check_calendar(dates)
    return dates


def check_calendar(calendar: Sequence[date]) -> None:
    for a, b in zip(calendar, calendar[1:]):
        if b <= a:
            raise CalendarError(f"calendar not strictly increasing at {b.isoformat()}")


@dataclass
class ActivitySeries:
    """Per-instrument activity on a regular grid.

    ``value`` is the trading value V (currency), ``count`` the number of
    trades N and ``volume`` the share volume Q, one entry per bin starting
    at ``start``.
    """

    instrument: str
    interval: SamplingInterval
    start: np.ndarray
    value: np.ndarray
    count: np.ndarray
    volume: np.ndarray
    trading_day_count: int

    def __len__(self) -> int:
        return self.value.size

    @property
    def bins_per_session(self) -> int | None:
        return self.interval.bins_per_session

    def with_value(self, value: np.ndarray) -> "ActivitySeries":
        return ActivitySeries(
            self.instrument, self.interval, self.start, np.asarray(value, dtype=float),
            self.count, self.volume, self.trading_day_count,
        )


def _grid_starts(calendar: Sequence[date], interval: SamplingInterval, nbins: int) -> np.ndarray:
    opens = np.array(
        [np.datetime64(datetime.combine(d, SESSION_OPEN), "s") for d in calendar],
        dtype="datetime64[s]",
    )
    if interval.is_intraday:
        offsets = np.arange(interval.bins_per_session) * np.timedelta64(interval.minutes * 60, "s")
        return (opens[:, None] + offsets[None, :]).ravel()
    return opens[: nbins * interval.days : interval.days]


def aggregate(
    trades: Sequence[TradeRecord],
    interval: SamplingInterval,
    calendar: Sequence[date],
    instrument: str | None = None,
) -> ActivitySeries:
    """Bin one instrument's trades into (V, N, Q) on the session grid.

    Intraday intervals give exactly ``390 / minutes`` bins per session; a
    trade at exactly 16:00:00 lands in the last bin. Multi-day intervals
    group consecutive calendar sessions from the first one, dropping a
    trailing partial group. Trade values are summed with ``math.fsum``.
    """
    symbols = {t.symbol for t in trades}
    if len(symbols) > 1:
        raise ValueError(f"aggregate expects one instrument, got {sorted(symbols)}")
    if instrument is None:
        if not symbols:
            raise ValueError("instrument name required for an empty trade list")
        instrument = symbols.pop()
    elif symbols and symbols != {instrument}:
        raise ValueError(f"trades are for {symbols.pop()!r}, not {instrument!r}")

    day_index = {d: i for i, d in enumerate(calendar)}
    ntr = len(trades)
    days = np.empty(ntr, dtype=np.int64)
    secs = np.empty(ntr, dtype=np.int64)
    values = np.empty(ntr, dtype=float)
    shares = np.empty(ntr, dtype=np.int64)
    for k, t in enumerate(trades):
        d = t.timestamp.date()
        try:
            days[k] = day_index[d]
        except KeyError:
            raise CalendarError(f"trade date {d.isoformat()} is not in the calendar") from None
        s = _seconds_into_session(t.timestamp)
        if not 0.0 <= s <= _SESSION_SECONDS:
            raise ValueError(f"trade at {t.timestamp.isoformat()} is outside the regular session")
        secs[k] = int(s)
        values[k] = t.price * t.shares
        shares[k] = t.shares

    if interval.is_intraday:
        bps = interval.bins_per_session
        nbins = len(calendar) * bps
        idx = days * bps + np.minimum(secs // (interval.minutes * 60), bps - 1)
        keep = np.ones(ntr, dtype=bool)
    else:
        nbins = len(calendar) // interval.days
        idx = days // interval.days
        keep = idx < nbins
    idx, values, shares = idx[keep], values[keep], shares[keep]

    count = np.bincount(idx, minlength=nbins).astype(np.int64)
    volume = np.zeros(nbins, dtype=np.int64)
    np.add.at(volume, idx, shares)
    value = np.zeros(nbins, dtype=float)
    if idx.size:
        order = np.argsort(idx, kind="stable")
        sorted_idx = idx[order]
        sorted_vals = values[order]
        bounds = np.flatnonzero(np.diff(sorted_idx)) + 1
        starts = np.concatenate(([0], bounds))
        ends = np.concatenate((bounds, [sorted_idx.size]))
        for a, b in zip(starts, ends):
            value[sorted_idx[a]] = math.fsum(sorted_vals[a:b])

    return ActivitySeries(
        instrument=instrument,
        interval=interval,
        start=_grid_starts(calendar, interval, nbins),
        value=value,
        count=count,
        volume=volume,
        trading_day_count=int(np.unique(days).size),
    )


def group_by_symbol(records: Iterable[TradeRecord]) -> dict[str, list[TradeRecord]]:
    """Split records per symbol, each sorted by timestamp (stable)."""
    groups: dict[str, list[TradeRecord]] = {}
    for r in records:
        groups.setdefault(r.symbol, []).append(r)
    for sym in groups:
        groups[sym].sort(key=lambda r: r.timestamp)
    return dict(sorted(groups.items()))


def aggregate_universe(
    records: Iterable[TradeRecord],
    intervals: Sequence[SamplingInterval],
    calendar: Sequence[date],
    threads: int = 1,
) -> dict[str, dict[str, ActivitySeries]]:
    """Aggregate every instrument at every interval.

    Returns ``{symbol: {interval_label: series}}``. Instruments are
    independent, so they are processed on a thread pool.
    """
    groups = group_by_symbol(records)

    def work(sym):
        return sym, {iv.label: aggregate(groups[sym], iv, calendar, sym) for iv in intervals}

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return dict(pool.map(work, groups))
    return dict(map(work, groups))


@dataclass
class ExclusionReport:
    min_days: int
    excluded: dict[str, int]
    retained: int


def filter_universe(series_by_instrument: Mapping[str, object], min_days: int):
    """Keep instruments traded on at least ``min_days`` sessions.

    Values may be :class:`ActivitySeries` or any mapping of them (e.g. the
    per-interval dicts of :func:`aggregate_universe`); the day count is read
    from the first series found. Returns ``(filtered, report)``.
    """
    if min_days < 1:
        raise ValueError("min_days must be >= 1")
    if not series_by_instrument:
        warnings.warn("filter_universe called with an empty universe", stacklevel=2)
        return {}, ExclusionReport(min_days, {}, 0)
    kept, excluded = {}, {}
    for sym, item in series_by_instrument.items():
        days = _day_count(item)
        if days >= min_days:
            kept[sym] = item
        else:
            excluded[sym] = days
    return kept, ExclusionReport(min_days, excluded, len(kept))


def _day_count(item) -> int:
    if isinstance(item, ActivitySeries):
        return item.trading_day_count
    if isinstance(item, Mapping) and item:
        return _day_count(next(iter(item.values())))
    raise TypeError(f"cannot read a trading-day count from {type(item).__name__}")


@dataclass
class CrossMeasureReport:
    """Cross-measure relations between mean daily V, N and Q."""

    averages: dict[str, tuple[float, float, float]]
    pearson_logNV: float
    pearson_logQV: float
    exponent_NV: float
    exponent_QV: float
    stderr_NV: float
    stderr_QV: float
    excluded: list[str]


def mean_activity(series: ActivitySeries) -> tuple[float, float, float]:
    """Mean (V, N, Q) per bin over the whole series."""
    if len(series) == 0:
        return 0.0, 0.0, 0.0
    return (
        math.fsum(series.value) / len(series),
        float(series.count.sum()) / len(series),
        float(series.volume.sum()) / len(series),
    )


def cross_measure_report(universe: Mapping[str, ActivitySeries]) -> CrossMeasureReport:
    """Correlate log<N> and log<Q> with log<V> across daily series."""
    return cross_measure_from_averages({s: mean_activity(ser) for s, ser in universe.items()})


def cross_measure_from_averages(averages: Mapping[str, tuple[float, float, float]]) -> CrossMeasureReport:
    usable, excluded = {}, []
    for sym, (v, n, q) in sorted(averages.items()):
        if v > 0 and n > 0 and q > 0:
            usable[sym] = (float(v), float(n), float(q))
        else:
            excluded.append(sym)
    if excluded:
        warnings.warn(f"excluded instruments with zero mean activity: {excluded}", stacklevel=2)
    if len(usable) < 3:
        raise ValueError(f"need at least 3 instruments with <V> > 0, got {len(usable)}")
    arr = np.log(np.array(list(usable.values())))
    try:
        nv = line_fit(arr[:, 0], arr[:, 1])
        qv = line_fit(arr[:, 0], arr[:, 2])
    except ValueError:
        raise ValueError("degenerate variance: all instruments share the same <V>") from None
    return CrossMeasureReport(
        averages=usable,
        pearson_logNV=nv.r,
        pearson_logQV=qv.r,
        exponent_NV=nv.slope,
        exponent_QV=qv.slope,
        stderr_NV=nv.slope_stderr,
        stderr_QV=qv.slope_stderr,
        excluded=excluded,
    )


def write_series_csv(series: ActivitySeries, path) -> None:
    """Columnar CSV: ``timestamp,V,N,Q`` with round-trip float formatting."""
    write_csv(
        path,
        ["timestamp", "V", "N", "Q"],
        zip((str(t) for t in series.start), series.value, series.count, series.volume),
    )


def read_series_csv(path, instrument: str, interval: SamplingInterval, trading_day_count: int = 0) -> ActivitySeries:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["timestamp", "V", "N", "Q"]:
        raise ValueError(f"{path}: not an activity series CSV")
    body = rows[1:]
    return ActivitySeries(
        instrument=instrument,
        interval=interval,
        start=np.array([r[0] for r in body], dtype="datetime64[s]"),
        value=np.array([float(r[1]) for r in body], dtype=float),
        count=np.array([int(r[2]) for r in body], dtype=np.int64),
        volume=np.array([int(r[3]) for r in body], dtype=np.int64),
        trading_day_count=trading_day_count,
    )
