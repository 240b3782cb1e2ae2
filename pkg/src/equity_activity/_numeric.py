"""Small numerical helpers shared by the analysis modules."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_stderr: float
    r: float
    n: int


def line_fit(x, y) -> LineFit:
    """Ordinary least-squares line through ``(x, y)``.

    Uses centered sums so that exact linear data reproduces its slope to
    rounding precision. ``slope_stderr`` is the usual OLS standard error
    (zero for two points or a perfect fit). Raises ``ValueError`` when
    ``x`` has no spread.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    n = x.size
    if n < 2:
        raise ValueError("need at least two points for a line fit")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0 or not math.isfinite(sxx):
        raise ValueError("degenerate abscissa: zero spread")
    syy = float(dy @ dy)
    slope = float(dx @ dy) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = dy - slope * dx
    if n > 2:
        stderr = math.sqrt(float(resid @ resid) / (n - 2) / sxx)
    else:
        stderr = 0.0
    r = float(dx @ dy) / math.sqrt(sxx * syy) if syy > 0 else 0.0
    return LineFit(slope, intercept, stderr, max(-1.0, min(1.0, r)), n)


def pop_std(x) -> float:
    """Population (divide-by-n) standard deviation, two-pass."""
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    return math.sqrt(float(d @ d) / x.size)
