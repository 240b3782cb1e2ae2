"""Synthetic long-range-correlated activity and the beta = 1 - H experiment.

Correlated Gaussian noise is produced by Fourier filtering: white complex
Gaussian coefficients are shaped to a power spectrum f^-(2H-1) and
transformed back. Exponentiating the noise gives a log-normal activity
series with the same correlation structure at large scales.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ._csvio import write_csv
from .dfa import DfaConfig, dfa
from .growth import (
    DEFAULT_BINS_PER_DECADE,
    DEFAULT_MIN_COUNT,
    GrowthObservations,
    conditional_stats,
    fit_beta,
    growth_rates,
)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class SurrogateSpec:
    length: int
    target_h: float
    log_mu: float = 0.0
    log_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.length < 2 or self.length & (self.length - 1):
            raise ValueError(f"length must be a power of two, got {self.length}")
        if not 0.0 < self.target_h < 1.0:
            raise ValueError(f"target_h must lie in (0, 1), got {self.target_h}")
        if self.log_sigma < 0:
            raise ValueError("log_sigma must be non-negative")


def splitmix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def member_seed(seed: int, index: int) -> int:
    """Seed for ensemble member ``index``: splitmix64(seed + (index + 1) * golden)."""
    return splitmix64((seed + (index + 1) * _GOLDEN) & _MASK64)


def correlated_noise(spec: SurrogateSpec) -> np.ndarray:
    """Zero-mean, unit-variance Gaussian noise with spectrum ~ f^-(2H-1)."""
    n = spec.length
    rng = np.random.default_rng(spec.seed & _MASK64)
    freqs = np.fft.rfftfreq(n)
    amp = np.zeros(freqs.size)
    amp[1:] = freqs[1:] ** (-(2.0 * spec.target_h - 1.0) / 2.0)
    coef = rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)
    coef[-1] = coef[-1].real * math.sqrt(2.0)
    x = np.fft.irfft(coef * amp, n)
    x -= x.mean()
    return x / x.std()


def lognormal_activity(spec: SurrogateSpec) -> np.ndarray:
    """exp(log_mu + log_sigma * noise): positive activity with a log-normal marginal."""
    return np.exp(spec.log_mu + spec.log_sigma * correlated_noise(spec))


def block_sums(v: np.ndarray, block: int) -> np.ndarray:
    m = v.size // block
    return v[: m * block].reshape(m, block).sum(axis=1)


@dataclass(frozen=True)
class RelationRow:
    target_h: float
    measured_h: float
    stderr_h: float
    beta: float
    stderr_beta: float
    members: int
    observations: int
    error: str | None = None

    @property
    def one_minus_h(self) -> float:
        return 1.0 - self.measured_h


@dataclass
class RelationExperimentReport:
    rows: list[RelationRow]
    ensemble: int
    length: int
    aggregation_levels: int


DEFAULT_TEMPLATE = SurrogateSpec(length=2**16, target_h=0.5, log_mu=0.0, log_sigma=0.25, seed=0)


def _member(spec: SurrogateSpec, config: DfaConfig, levels: int):
    a = lognormal_activity(spec)
    h = dfa(a, config).h
    obs = GrowthObservations.pool(growth_rates(block_sums(a, 2**k)) for k in range(levels + 1))
    return h, obs


def relation_experiment(
    h_schedule: Sequence[float],
    ensemble: int = 32,
    template: SurrogateSpec = DEFAULT_TEMPLATE,
    aggregation_levels: int = 10,
    dfa_config: DfaConfig = DfaConfig(),
    bins_per_decade: int = DEFAULT_BINS_PER_DECADE,
    min_count: int = DEFAULT_MIN_COUNT,
    threads: int = 1,
) -> RelationExperimentReport:
    """Measure H and beta on surrogate ensembles, one row per target H.

    Each member is a log-normal activity stream at the finest resolution.
    Its H comes from DFA on that stream. Its growth observations are pooled
    over block aggregates of 1, 2, 4, ..., 2**aggregation_levels samples,
    playing the role of sampling intervals from minutes to weeks, so that
    V_i spans several decades through the amount of aggregated activity.
    Row failures are recorded in ``error`` and the experiment continues.
    """
    if ensemble < 16:
        raise ValueError(f"ensemble must be >= 16, got {ensemble}")
    if template.length < 2**14:
        raise ValueError(f"series length must be >= 2**14, got {template.length}")
    if 2**aggregation_levels * 4 > template.length:
        raise ValueError("aggregation_levels too large for the series length")

    rows = []
    for i, target in enumerate(h_schedule):
        specs = [
            replace(template, target_h=float(target), seed=member_seed(template.seed, i * ensemble + j))
            for j in range(ensemble)
        ]
        try:
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    results = list(pool.map(lambda s: _member(s, dfa_config, aggregation_levels), specs))
            else:
                results = [_member(s, dfa_config, aggregation_levels) for s in specs]
            hs = np.array([r[0] for r in results])
            obs = GrowthObservations.pool(r[1] for r in results)
            fit = fit_beta(conditional_stats(obs, bins_per_decade, min_count))
            rows.append(RelationRow(
                float(target), float(hs.mean()), float(hs.std(ddof=1) / math.sqrt(hs.size)),
                fit.exponent, fit.stderr, ensemble, len(obs),
            ))
        except ValueError as exc:
            nan = float("nan")
            rows.append(RelationRow(float(target), nan, nan, nan, nan, ensemble, 0, str(exc)))
    return RelationExperimentReport(rows, ensemble, template.length, aggregation_levels)


def write_relation_csv(report: RelationExperimentReport, path) -> None:
    write_csv(
        path,
        ["target_H", "measured_H", "stderr_H", "beta", "stderr_beta", "one_minus_H"],
        ((r.target_h, r.measured_h, r.stderr_h, r.beta, r.stderr_beta, r.one_minus_h) for r in report.rows),
    )
