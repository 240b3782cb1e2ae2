"""Trading-value distributions: histograms, log normalization, log-normal fits."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import stats

from ._csvio import write_csv
from ._numeric import pop_std
from .ingest import ActivitySeries, SamplingInterval

DEFAULT_BINS = 50


@dataclass
class PdfEstimate:
    centers: np.ndarray
    densities: np.ndarray
    edges: np.ndarray
    scheme: str
    sample_count: int

    def integral(self) -> float:
        return float(np.sum(self.densities * np.diff(self.edges)))


@dataclass(frozen=True)
class LogNormalFit:
    mu: float
    sigma: float
    ks: float
    n: int


def _as_array(values) -> np.ndarray:
    return np.asarray(values, dtype=float).ravel()


def pdf_histogram(values, bins: int = DEFAULT_BINS, scheme: str = "log", edges=None) -> PdfEstimate:
    """Histogram density normalized so that sum(density * width) = 1.

    ``scheme="log"`` uses geometrically spaced edges between the sample
    extremes and requires positive values; ``"linear"`` uses equal widths.
    Pass ``edges`` to evaluate several samples on one grid (values outside
    the grid are not counted, so the integral can fall below one).
    """
    x = _as_array(values)
    if scheme not in ("log", "linear"):
        raise ValueError(f"unknown binning scheme {scheme!r}")
    if x.size < 10:
        raise ValueError(f"need at least 10 values, got {x.size}")
    if scheme == "log":
        bad = x[~(x > 0)]
        if bad.size:
            raise ValueError(f"log binning needs positive values; offenders: {bad[:10].tolist()}")
    if edges is None:
        lo, hi = float(x.min()), float(x.max())
        if lo == hi:
            if scheme == "log":
                lo, hi = lo * (1 - 1e-6), hi * (1 + 1e-6)
            else:
                pad = 1e-6 * max(abs(lo), 1.0)
                lo, hi = lo - pad, hi + pad
        edges = np.geomspace(lo, hi, bins + 1) if scheme == "log" else np.linspace(lo, hi, bins + 1)
    else:
        edges = np.asarray(edges, dtype=float)
    counts, _ = np.histogram(x, bins=edges)
    widths = np.diff(edges)
    dens = counts / (x.size * widths)
    centers = np.sqrt(edges[:-1] * edges[1:]) if scheme == "log" else 0.5 * (edges[:-1] + edges[1:])
    return PdfEstimate(centers, dens, edges, scheme, int(x.size))


def normalize_logs(values) -> np.ndarray:
    """Map V to z = (ln V - <ln V>) / sigma(ln V), population std."""
    x = _as_array(values)
    if np.any(~(x > 0)):
        raise ValueError("normalize_logs needs positive values")
    logs = np.log(x)
    sd = pop_std(logs)
    if sd == 0.0 or np.unique(x).size < 2:
        raise ValueError("zero variance in ln V")
    return (logs - logs.mean()) / sd


def fit_lognormal(values) -> LogNormalFit:
    """Moment fit of ln V plus the KS distance of standardized ln V to N(0, 1)."""
    x = _as_array(values)
    if x.size < 30:
        raise ValueError(f"need at least 30 values, got {x.size}")
    if np.any(~(x > 0)):
        raise ValueError("fit_lognormal needs positive values")
    logs = np.log(x)
    mu = float(logs.mean())
    sigma = pop_std(logs)
    if sigma == 0.0:
        raise ValueError("sigma of ln V is zero")
    ks = stats.kstest((logs - mu) / sigma, "norm").statistic
    return LogNormalFit(mu, sigma, float(ks), int(x.size))


def positive_values(items: Iterable) -> tuple[np.ndarray, int]:
    """Pool V from series or arrays, dropping zeros; returns (values, zeros)."""
    chunks = []
    for item in items:
        v = item.value if isinstance(item, ActivitySeries) else _as_array(item)
        chunks.append(v)
    pooled = np.concatenate(chunks) if chunks else np.empty(0)
    keep = pooled > 0
    return pooled[keep], int(pooled.size - keep.sum())


@dataclass(frozen=True)
class MomentRow:
    interval: str
    minutes: float
    mean_log: float
    std_log: float
    n: int
    excluded_zeros: int


def moments_vs_interval(universe: Mapping) -> list[MomentRow]:
    """<ln V> and sigma(ln V) per sampling interval, pooled over instruments.

    ``universe`` maps an interval (a :class:`SamplingInterval` or its label)
    to an iterable of series or value arrays. Zero-V bins are excluded and
    counted.
    """
    rows = []
    for key, items in universe.items():
        iv = key if isinstance(key, SamplingInterval) else SamplingInterval.parse(str(key))
        vals, zeros = positive_values(items)
        if zeros:
            warnings.warn(f"{iv.label}: excluded {zeros} zero-V bins", stacklevel=2)
        if vals.size == 0:
            raise ValueError(f"{iv.label}: no positive trading values")
        logs = np.log(vals)
        rows.append(MomentRow(iv.label, float(iv.length_minutes), float(logs.mean()), pop_std(logs), int(vals.size), zeros))
    rows.sort(key=lambda r: r.minutes)
    return rows


def max_density_gap(a: PdfEstimate, b: PdfEstimate) -> float:
    """Pointwise max |density difference| of two estimates on the same grid."""
    if not np.array_equal(a.edges, b.edges):
        raise ValueError("estimates are on different grids")
    return float(np.max(np.abs(a.densities - b.densities)))


def write_moments_csv(rows: list[MomentRow], path) -> None:
    write_csv(
        path,
        ["interval", "minutes", "mean_lnV", "std_lnV", "n", "excluded_zeros"],
        ((r.interval, r.minutes, r.mean_log, r.std_log, r.n, r.excluded_zeros) for r in rows),
    )


def lognormal_pdf_z(z) -> np.ndarray:
    """Standard normal density, the collapsed log-normal reference curve."""
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
