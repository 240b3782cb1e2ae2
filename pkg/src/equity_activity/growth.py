"""Growth rates of activity and the scaling of their conditional spread.

g(t) = ln(1 + V(t) / V(t-1)) is computed for every consecutive pair with a
positive initial value V_i = V(t-1). Observations from all instruments and
times are pooled, binned logarithmically in V_i, and the conditional std
sigma(g | V_i) is fitted to a power law V_i^-beta.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._csvio import write_csv
from ._numeric import line_fit
from .ingest import ActivitySeries

LN2 = math.log(2.0)
DEFAULT_BINS_PER_DECADE = 8
DEFAULT_MIN_COUNT = 10


@dataclass
class GrowthObservations:
    v_initial: np.ndarray
    g: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return self.g.size

    @classmethod
    def pool(cls, parts: Iterable["GrowthObservations"]) -> "GrowthObservations":
        parts = list(parts)
        if not parts:
            return cls(np.empty(0), np.empty(0), 0)
        return cls(
            np.concatenate([p.v_initial for p in parts]),
            np.concatenate([p.g for p in parts]),
            sum(p.skipped for p in parts),
        )


def growth_rates(series) -> GrowthObservations:
    """Growth rate for each consecutive pair; pairs with V(t-1) = 0 are skipped.

    Accepts an :class:`ActivitySeries` or a plain array of V.
    """
    v = series.value if isinstance(series, ActivitySeries) else np.asarray(series, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two bins for a growth rate")
    prev, nxt = v[:-1], v[1:]
    ok = prev > 0
    prev, nxt = prev[ok], nxt[ok]
    return GrowthObservations(prev.copy(), np.log1p(nxt / prev), int((~ok).sum()))


@dataclass
class BinnedStat:
    """Conditional mean/std of g over logarithmic bins of V_i.

    Empty bins have ``count == 0`` and NaN mean/std. Bins with fewer than
    ``min_count`` observations are kept but flagged via :attr:`usable`.
    """

    edges: np.ndarray
    centers: np.ndarray
    count: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    min_count: int = DEFAULT_MIN_COUNT

    @property
    def occupied(self) -> np.ndarray:
        return self.count > 0

    @property
    def usable(self) -> np.ndarray:
        return self.count >= self.min_count


def conditional_stats(
    obs: GrowthObservations,
    bins_per_decade: int = DEFAULT_BINS_PER_DECADE,
    min_count: int = DEFAULT_MIN_COUNT,
) -> BinnedStat:
    """Bin observations by log10 V_i from the smallest V_i upward.

    Within each bin the values are reduced in sorted order, so the result
    does not depend on how observations were concatenated.
    """
    if len(obs) == 0:
        raise ValueError("no growth observations")
    if bins_per_decade < 1:
        raise ValueError("bins_per_decade must be >= 1")
    lv = np.log10(obs.v_initial)
    lo, hi = float(lv.min()), float(lv.max())
    nb = max(1, math.ceil((hi - lo) * bins_per_decade))
    idx = np.clip(np.floor((lv - lo) * bins_per_decade).astype(np.int64), 0, nb - 1)

    order = np.lexsort((obs.g, idx))
    sidx, sg = idx[order], obs.g[order]
    count = np.bincount(sidx, minlength=nb)
    mean = np.full(nb, np.nan)
    std = np.full(nb, np.nan)
    occ = np.flatnonzero(count)
    starts = np.searchsorted(sidx, occ, side="left")
    sums = np.add.reduceat(sg, starts)
    mean[occ] = sums / count[occ]
    dev = sg - mean[sidx]
    std[occ] = np.sqrt(np.add.reduceat(dev * dev, starts) / count[occ])

    grid = lo + np.arange(nb + 1) / bins_per_decade
    return BinnedStat(
        edges=10.0 ** grid,
        centers=10.0 ** (0.5 * (grid[:-1] + grid[1:])),
        count=count,
        mean=mean,
        std=std,
        min_count=min_count,
    )


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    intercept: float
    stderr: float
    lo: float
    hi: float
    n_bins: int


def default_fit_range(stat: BinnedStat) -> tuple[float, float]:
    """Usable-bin span with half a decade trimmed from each end."""
    c = np.log10(stat.centers[stat.usable])
    if c.size == 0:
        raise ValueError("no bins meet the minimum occupancy")
    return 10.0 ** (c.min() + 0.5), 10.0 ** (c.max() - 0.5)


def fit_beta(stat: BinnedStat, fit_range: Sequence[float] | None = None) -> PowerLawFit:
    """Fit sigma(g | V_i) ~ V_i^-beta over usable bins inside ``fit_range``.

    Returns beta as the negated log-log slope. Bins with zero std are
    dropped with a warning; fewer than three remaining bins is an error.
    """
    lo, hi = default_fit_range(stat) if fit_range is None else map(float, fit_range)
    if not lo < hi:
        raise ValueError(f"empty fit range [{lo}, {hi}]")
    sel = stat.usable & (stat.centers >= lo) & (stat.centers <= hi)
    zero = sel & (stat.std == 0)
    if zero.any():
        warnings.warn(f"excluding {int(zero.sum())} zero-std bins from the beta fit", stacklevel=2)
        sel &= ~zero
    if sel.sum() < 3:
        raise ValueError(f"need at least 3 occupied bins in [{lo:g}, {hi:g}], got {int(sel.sum())}")
    fit = line_fit(np.log10(stat.centers[sel]), np.log10(stat.std[sel]))
    return PowerLawFit(-fit.slope, fit.intercept, fit.slope_stderr, lo, hi, int(sel.sum()))


@dataclass
class MeanGrowthReport:
    centers: np.ndarray
    counts: np.ndarray
    mean_g: np.ndarray
    reference: float = LN2


def mean_growth_report(stat: BinnedStat) -> MeanGrowthReport:
    occ = stat.occupied
    if not occ.any():
        raise ValueError("empty binned statistic")
    return MeanGrowthReport(stat.centers[occ], stat.count[occ], stat.mean[occ])


def write_binned_csv(stat: BinnedStat, path) -> None:
    occ = stat.occupied
    write_csv(
        path,
        ["bin_center", "count", "mean_g", "std_g"],
        zip(stat.centers[occ], stat.count[occ], stat.mean[occ], stat.std[occ]),
    )
