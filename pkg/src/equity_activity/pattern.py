"""Intraday activity pattern and its removal.

The pattern of one instrument is the mean trading value at each intraday
slot divided by the mean over all bins. Dividing each bin by its slot's
pattern value removes the daily U-shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._csvio import write_csv
from .ingest import SESSION_MINUTES, ActivitySeries


class PatternError(ValueError):
    pass


@dataclass
class IntradayPattern:
    instrument: str
    slot_length: int
    values: np.ndarray
    counts: np.ndarray

    @property
    def slot_starts(self) -> np.ndarray:
        """Slot start, minutes after the open."""
        return np.arange(self.values.size) * self.slot_length

    def weighted_mean(self) -> float:
        return float(self.values @ self.counts / self.counts.sum())


@dataclass
class MarketPattern:
    slot_length: int
    mean: np.ndarray
    std: np.ndarray
    counts: np.ndarray
    n_instruments: int

    @property
    def slot_starts(self) -> np.ndarray:
        return np.arange(self.mean.size) * self.slot_length


def _session_matrix(series: ActivitySeries) -> np.ndarray:
    if not series.interval.is_intraday:
        raise PatternError(f"{series.instrument}: intraday pattern needs an intraday series, got {series.interval}")
    bps = series.bins_per_session
    if len(series) % bps:
        raise PatternError(f"{series.instrument}: series length {len(series)} is not a whole number of sessions")
    return series.value.reshape(-1, bps)


def _bins_per_slot(series: ActivitySeries, slot_length: int) -> int:
    bin_len = series.interval.minutes
    if slot_length <= 0 or slot_length % bin_len or SESSION_MINUTES % slot_length:
        raise PatternError(
            f"slot length {slot_length} min must be a multiple of the {bin_len}-min bins "
            f"and divide the {SESSION_MINUTES}-min session"
        )
    return slot_length // bin_len


def intraday_pattern(series: ActivitySeries, slot_length: int | None = None) -> IntradayPattern:
    """Estimate A(s) = <V>_s / <V> for one instrument.

    ``slot_length`` defaults to the series' own bin length. A slot spanning
    several bins averages over all of them. Needs at least two sessions.
    """
    days = _session_matrix(series)
    if slot_length is None:
        slot_length = series.interval.minutes
    k = _bins_per_slot(series, slot_length)
    if days.shape[0] < 2:
        raise PatternError(f"{series.instrument}: need at least 2 sessions, got {days.shape[0]}")
    overall = days.mean()
    if overall == 0.0:
        raise PatternError(f"{series.instrument}: mean trading value is zero; pattern undefined")
    per_slot = days.reshape(days.shape[0], -1, k)
    slot_mean = per_slot.mean(axis=(0, 2))
    counts = np.full(slot_mean.size, days.shape[0] * k, dtype=np.int64)
    return IntradayPattern(series.instrument, slot_length, slot_mean / overall, counts)


def market_pattern(patterns: Sequence[IntradayPattern]) -> MarketPattern:
    """Slot-wise mean and population std of A(s) across instruments."""
    if not patterns:
        raise PatternError("no patterns to combine")
    slot = patterns[0].slot_length
    size = patterns[0].values.size
    for p in patterns:
        if p.slot_length != slot or p.values.size != size:
            raise PatternError(
                f"pattern grid mismatch: {p.instrument} has {p.values.size} slots of "
                f"{p.slot_length} min, expected {size} of {slot}"
            )
    stack = np.vstack([p.values for p in patterns])
    counts = np.sum([p.counts for p in patterns], axis=0)
    return MarketPattern(slot, stack.mean(axis=0), stack.std(axis=0), counts, len(patterns))


def deseasonalize(series: ActivitySeries, pattern: IntradayPattern) -> ActivitySeries:
    """Divide each bin's V by its slot's A(s); N and Q are untouched.

    A zero pattern value is accepted only where every bin of the slot has
    zero V (those bins stay zero).
    """
    days = _session_matrix(series)
    k = _bins_per_slot(series, pattern.slot_length)
    if pattern.values.size * k != days.shape[1]:
        raise PatternError("pattern does not cover the session grid of the series")
    a = np.repeat(pattern.values, k)
    zero = a == 0.0
    if zero.any():
        if np.any(days[:, zero] != 0.0):
            slots = sorted(set((np.flatnonzero(zero) // k).tolist()))
            raise PatternError(f"{series.instrument}: A(s)=0 for slots {slots} that contain nonzero V")
    safe = np.where(zero, 1.0, a)
    adjusted = np.where(zero[None, :], 0.0, days / safe[None, :])
    return series.with_value(adjusted.ravel())


def write_pattern_csv(pattern: IntradayPattern, path) -> None:
    write_csv(path, ["slot_start_minute", "A"], zip(pattern.slot_starts, pattern.values))


def write_market_pattern_csv(mp: MarketPattern, path) -> None:
    write_csv(path, ["slot", "mean", "std"], zip(mp.slot_starts, mp.mean, mp.std))
