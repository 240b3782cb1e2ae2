"""Detrended fluctuation analysis and cross-sectional Hurst statistics.

For a window size ``ell`` the cumulative profile is cut into floor(n/ell)
non-overlapping windows from the start and as many from the end; each
window is detrended by a least-squares polynomial and F(ell) is the RMS of
all residuals. The Hurst exponent is the log-log slope of F against ell.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from ._csvio import write_csv
from ._numeric import line_fit, pop_std
from .ingest import ActivitySeries


class DegenerateSeriesError(ValueError):
    pass


@dataclass(frozen=True)
class DfaConfig:
    """DFA settings.

    ``max_window_fraction`` caps the largest window at that fraction of the
    series length. ``fit_range`` is an inclusive (lo, hi) range of window
    sizes for the Hurst fit; ``None`` uses every computed window.
    """

    detrend_order: int = 1
    windows_per_decade: int = 8
    min_window: int | None = None
    max_window_fraction: float = 0.1
    fit_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.detrend_order < 1:
            raise ValueError("detrend_order must be >= 1")
        if self.windows_per_decade < 1:
            raise ValueError("windows_per_decade must be >= 1")
        if not 0 < self.max_window_fraction <= 1:
            raise ValueError("max_window_fraction must be in (0, 1]")
        if self.window_min <= self.detrend_order + 1:
            raise ValueError(
                f"min_window {self.window_min} must exceed detrend_order + 1 = {self.detrend_order + 1}"
            )

    @property
    def window_min(self) -> int:
        if self.min_window is not None:
            return self.min_window
        return max(6, 2 * (self.detrend_order + 2))


def window_sizes(n: int, config: DfaConfig = DfaConfig()) -> np.ndarray:
    """Log-spaced integer window sizes from the minimum window to the cap."""
    lo = config.window_min
    hi = int(n * config.max_window_fraction)
    if hi < lo:
        return np.empty(0, dtype=np.int64)
    steps = np.arange(int(math.floor(math.log10(hi / lo) * config.windows_per_decade + 1e-9)) + 1)
    sizes = np.unique(np.round(lo * 10.0 ** (steps / config.windows_per_decade)).astype(np.int64))
    return sizes[(sizes >= lo) & (sizes <= hi)]


def profile(x) -> np.ndarray:
    """Cumulative sum of the mean-subtracted series."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 4:
        raise ValueError("profile needs a 1-d series of length >= 4")
    if np.all(x == x[0]):
        return np.zeros_like(x)
    return np.cumsum(x - x.mean())


def _detrend_basis(ell: int, order: int) -> np.ndarray:
    t = np.linspace(-1.0, 1.0, ell)
    q, _ = np.linalg.qr(np.vander(t, order + 1))
    return q


def fluctuation_function(series, config: DfaConfig = DfaConfig(), scales=None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(ell, F)`` for the window sizes of ``config`` (or ``scales``)."""
    x = series.value if isinstance(series, ActivitySeries) else np.asarray(series, dtype=float)
    n = x.size
    order = config.detrend_order
    if scales is None:
        if n < 4 * config.window_min:
            raise ValueError(f"series of length {n} is shorter than 4 x min_window = {4 * config.window_min}")
        scales = window_sizes(n, config)
        if scales.size == 0:
            raise ValueError(f"no window sizes fit a series of length {n}")
    else:
        scales = np.asarray(scales, dtype=np.int64)
        if np.any(scales < order + 2) or np.any(scales > n):
            raise ValueError(f"window sizes must lie in [{order + 2}, {n}]")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    if n == 0 or np.all(x == x[0]):
        raise DegenerateSeriesError("constant series has no fluctuations")
    y = profile(x)
    out = np.empty(scales.size)
    for k, ell in enumerate(scales):
        ell = int(ell)
        m = n // ell
        segs = np.vstack((y[: m * ell].reshape(m, ell), y[n - m * ell :].reshape(m, ell)))
        q = _detrend_basis(ell, order)
        resid = segs - (segs @ q) @ q.T
        out[k] = math.sqrt(float(np.mean(resid * resid)))
    return scales.copy(), out


@dataclass(frozen=True)
class HurstFit:
    h: float
    stderr: float
    lo: float
    hi: float
    n_points: int


def hurst(ell, fluct, fit_range: Sequence[float] | None = None) -> HurstFit:
    """Slope of log F versus log ell over ``fit_range`` (inclusive)."""
    ell = np.asarray(ell, dtype=float)
    fluct = np.asarray(fluct, dtype=float)
    sel = np.ones(ell.size, dtype=bool)
    if fit_range is not None:
        lo, hi = fit_range
        sel &= (ell >= lo) & (ell <= hi)
    zero = sel & ~(fluct > 0)
    if zero.any():
        warnings.warn(f"excluding {int(zero.sum())} points with F = 0 from the Hurst fit", stacklevel=2)
        sel &= ~zero
    if sel.sum() < 4:
        raise ValueError(f"need at least 4 points for a Hurst fit, got {int(sel.sum())}")
    fit = line_fit(np.log(ell[sel]), np.log(fluct[sel]))
    return HurstFit(fit.slope, fit.slope_stderr, float(ell[sel].min()), float(ell[sel].max()), int(sel.sum()))


@dataclass
class DfaResult:
    ell: np.ndarray
    fluct: np.ndarray
    h: float
    stderr: float
    fit_range: tuple[float, float]


def dfa(series, config: DfaConfig = DfaConfig()) -> DfaResult:
    ell, f = fluctuation_function(series, config)
    fit = hurst(ell, f, config.fit_range)
    return DfaResult(ell, f, fit.h, fit.stderr, (fit.lo, fit.hi))


@dataclass(frozen=True)
class HurstRow:
    symbol: str
    h: float
    stderr: float
    mean_daily_v: float


@dataclass
class HurstCrossSection:
    rows: list[HurstRow]
    mean_h: float
    std_h: float
    ks: float
    low_n: bool
    failures: dict[str, str] = field(default_factory=dict)
    curves: dict[str, DfaResult] = field(default_factory=dict)


MIN_CROSS_SECTION = 10


def _series_for_dfa(item, log_transform: bool) -> np.ndarray:
    v = item.value if isinstance(item, ActivitySeries) else np.asarray(item, dtype=float)
    if log_transform:
        if np.any(~(v > 0)):
            raise ValueError("log transform needs strictly positive activity")
        v = np.log(v)
    return v


def hurst_cross_section(
    universe: Mapping[str, object],
    mean_daily_v: Mapping[str, float],
    config: DfaConfig = DfaConfig(),
    log_transform: bool = False,
    threads: int = 1,
) -> HurstCrossSection:
    """Hurst exponent per instrument plus a normal fit across instruments.

    Instruments whose DFA fails are recorded in ``failures`` and skipped.
    Fewer than ten successful instruments still computes but sets ``low_n``.
    """
    symbols = sorted(universe)

    def work(sym):
        try:
            return sym, dfa(_series_for_dfa(universe[sym], log_transform), config), None
        except ValueError as exc:
            return sym, None, str(exc)

    if threads > 1 and len(symbols) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, symbols))
    else:
        results = [work(s) for s in symbols]

    rows, failures, curves = [], {}, {}
    for sym, res, err in results:
        if res is None:
            failures[sym] = err
            continue
        curves[sym] = res
        rows.append(HurstRow(sym, res.h, res.stderr, float(mean_daily_v.get(sym, float("nan")))))
    hs = np.array([r.h for r in rows])
    if hs.size == 0:
        return HurstCrossSection(rows, float("nan"), float("nan"), float("nan"), True, failures, curves)
    mean_h = float(hs.mean())
    std_h = pop_std(hs)
    ks = float(stats.kstest((hs - mean_h) / std_h, "norm").statistic) if std_h > 0 else float("nan")
    return HurstCrossSection(rows, mean_h, std_h, ks, hs.size < MIN_CROSS_SECTION, failures, curves)


@dataclass
class SizeBins:
    centers: np.ndarray
    count: np.ndarray
    mean_h: np.ndarray
    std_h: np.ndarray
    mean_log_v: np.ndarray


@dataclass
class SizeRegression:
    bins: SizeBins
    slope: float
    intercept: float
    stderr: float


def size_bins(cross_section: HurstCrossSection, bins_per_decade: int = 4) -> SizeBins:
    """Occupied logarithmic bins of mean daily V with per-bin H statistics."""
    rows = [r for r in cross_section.rows if r.mean_daily_v > 0 and math.isfinite(r.h)]
    if not rows:
        raise ValueError("no instruments with positive mean daily V")
    v = np.array([r.mean_daily_v for r in rows])
    h = np.array([r.h for r in rows])
    lv = np.log10(v)
    lo, hi = float(lv.min()), float(lv.max())
    if hi == lo:
        raise ValueError("degenerate <V> spread: all instruments have the same mean daily V")
    nb = max(1, math.ceil((hi - lo) * bins_per_decade))
    idx = np.clip(np.floor((lv - lo) * bins_per_decade).astype(np.int64), 0, nb - 1)
    centers, count, mean_h, std_h, mean_lv = [], [], [], [], []
    for b in range(nb):
        sel = idx == b
        if not sel.any():
            continue
        centers.append(10.0 ** (lo + (b + 0.5) / bins_per_decade))
        count.append(int(sel.sum()))
        mean_h.append(float(h[sel].mean()))
        std_h.append(pop_std(h[sel]))
        mean_lv.append(float(np.log(v[sel]).mean()))
    return SizeBins(*(np.array(a) for a in (centers, count, mean_h, std_h, mean_lv)))


def hurst_vs_size(cross_section: HurstCrossSection, bins_per_decade: int = 4) -> SizeRegression:
    """Regress per-bin mean H on per-bin mean ln<V> (slope is H per unit ln<V>)."""
    bins = size_bins(cross_section, bins_per_decade)
    if bins.count.size < 3:
        raise ValueError(f"need at least 3 occupied size bins, got {bins.count.size}")
    fit = line_fit(bins.mean_log_v, bins.mean_h)
    return SizeRegression(bins, fit.slope, fit.intercept, fit.slope_stderr)


def write_curves_csv(curves: Mapping[str, DfaResult], path) -> None:
    write_csv(
        path,
        ["symbol", "ell", "F"],
        ((sym, int(l), f) for sym in sorted(curves) for l, f in zip(curves[sym].ell, curves[sym].fluct)),
    )


def write_cross_section_csv(cs: HurstCrossSection, path) -> None:
    write_csv(
        path,
        ["symbol", "H", "stderr", "mean_daily_V"],
        ((r.symbol, r.h, r.stderr, r.mean_daily_v) for r in cs.rows),
    )
