import math
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from equity_activity.growth import (
    LN2,
    BinnedStat,
    GrowthObservations,
    conditional_stats,
    fit_beta,
    growth_rates,
    mean_growth_report,
)
from equity_activity.surrogate import SurrogateSpec, block_sums, lognormal_activity


def test_hand_values():
    obs = growth_rates([1.0, 1.0, 0.0, 3.0, 9.0])
    # pair (0 -> 3) is skipped because V(t-1) = 0
    assert obs.skipped == 1
    assert np.allclose(obs.g, [LN2, 0.0, math.log(4.0)], atol=1e-12, rtol=0)
    assert np.array_equal(obs.v_initial, [1.0, 1.0, 3.0])


def test_too_short():
    with pytest.raises(ValueError):
        growth_rates([5.0])


@settings(max_examples=60, deadline=None)
@given(arrays(float, 12, elements=st.floats(1e-3, 1e6)), st.floats(1e-3, 1e3))
def test_rescaling_leaves_g_unchanged(v, c):
    assert np.allclose(growth_rates(c * v).g, growth_rates(v).g, rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_monotone_in_next_value(prev, a, b):
    lo, hi = sorted((a, b))
    assert growth_rates([prev, lo]).g[0] <= growth_rates([prev, hi]).g[0]


def test_constant_series_gives_ln2_and_zero_std():
    stat = conditional_stats(growth_rates(np.full(50, 7.0)), min_count=1)
    assert stat.count.sum() == 49
    occ = stat.occupied
    assert np.allclose(stat.mean[occ], LN2) and np.all(stat.std[occ] == 0)


def _delta_method_obs(beta, sigma0, rng, per_bin=4000):
    """V_i on a grid with a small log-normal step whose width scales as V_i^-beta."""
    vi = np.repeat(np.logspace(0, 6, 49), per_bin)
    s = sigma0 * vi ** (-beta)
    vn = vi * np.exp(s * rng.standard_normal(vi.size))
    return GrowthObservations(vi, np.log1p(vn / vi))


def test_conditional_std_tracks_delta_method(rng):
    # for small s, g = ln(1 + e^s) ~ ln2 + s/2, so sigma(g) ~ s/2
    beta, sigma0 = 0.14, 0.1
    stat = conditional_stats(_delta_method_obs(beta, sigma0, rng), bins_per_decade=8)
    occ = stat.occupied
    expected = sigma0 * stat.centers[occ] ** (-beta) / 2
    # grid points sit at bin edges, not centres; compare the slope instead
    fit = fit_beta(stat)
    assert fit.exponent == pytest.approx(beta, abs=0.01)
    assert np.all(np.abs(np.log(stat.std[occ] / expected)) < 0.15)


def _synthetic_stat(std, centers=None):
    n = len(std)
    centers = np.logspace(0, (n - 1) / 8, n) if centers is None else centers
    log_c = np.log10(centers)
    edges = 10.0 ** np.r_[log_c - 1 / 16, log_c[-1] + 1 / 16]
    return BinnedStat(edges, centers, np.full(n, 100), np.zeros(n), np.asarray(std, float))


def test_fit_beta_exact_power_law():
    centers = np.logspace(0, 5, 41)
    fit = fit_beta(_synthetic_stat(0.3 * centers ** -0.14, centers))
    assert fit.exponent == pytest.approx(0.14, abs=1e-9)
    # half a decade trimmed from each end
    assert fit.lo == pytest.approx(10**0.5) and fit.hi == pytest.approx(10**4.5)


def test_fit_beta_flat():
    fit = fit_beta(_synthetic_stat(np.full(41, 0.2)))
    assert fit.exponent == pytest.approx(0.0, abs=1e-12)


def test_fit_beta_too_few_bins():
    with pytest.raises(ValueError, match="at least 3"):
        fit_beta(_synthetic_stat([0.1, 0.2]), fit_range=(1, 10))


def test_fit_beta_warns_on_zero_std():
    std = np.full(41, 0.2)
    std[20] = 0.0
    with pytest.warns(UserWarning, match="zero-std"):
        fit = fit_beta(_synthetic_stat(std))
    assert fit.exponent == pytest.approx(0.0, abs=1e-12)


def test_sparse_bins_flagged_not_dropped():
    obs = GrowthObservations(np.array([1.0, 1.0, 100.0]), np.array([0.5, 0.7, 0.6]))
    stat = conditional_stats(obs, bins_per_decade=1, min_count=10)
    assert stat.count.sum() == 3 and not stat.usable.any()


def test_pooling_order_invariance(rng):
    parts = [_delta_method_obs(0.2, 0.5, np.random.default_rng(k), per_bin=50) for k in range(5)]
    a = conditional_stats(GrowthObservations.pool(parts))
    b = conditional_stats(GrowthObservations.pool(parts[::-1]))
    perm = rng.permutation(len(GrowthObservations.pool(parts)))
    whole = GrowthObservations.pool(parts)
    c = conditional_stats(GrowthObservations(whole.v_initial[perm], whole.g[perm]))
    for other in (b, c):
        assert np.array_equal(a.count, other.count)
        assert np.array_equal(a.mean, other.mean, equal_nan=True)
        assert np.array_equal(a.std, other.std, equal_nan=True)


def test_beta_invariant_under_rescaling(rng):
    obs = _delta_method_obs(0.2, 0.3, rng, per_bin=500)
    b1 = fit_beta(conditional_stats(obs)).exponent
    scaled = GrowthObservations(obs.v_initial * 1000.0, obs.g)
    assert fit_beta(conditional_stats(scaled)).exponent == pytest.approx(b1, abs=1e-9)


class TestMeanGrowth:
    def test_persistent_large_v_near_ln2(self):
        # large V_i come from long aggregation blocks, whose successive sums are nearly equal
        parts = []
        for seed in range(8):
            a = lognormal_activity(SurrogateSpec(2**16, 0.75, log_mu=5.0, log_sigma=1.0, seed=seed))
            parts += [growth_rates(block_sums(a, 2**k)) for k in range(11)]
        rep = mean_growth_report(conditional_stats(GrowthObservations.pool(parts)))
        top = np.flatnonzero(rep.counts >= 100)[-3:]
        assert np.all(np.abs(rep.mean_g[top] - LN2) < 0.05)

    def test_iid_small_v_above_ln2(self, rng):
        v = rng.exponential(1.0, 10**5)
        rep = mean_growth_report(conditional_stats(growth_rates(v)))
        # small V_i followed by an independent draw: g >> ln 2
        assert rep.mean_g[0] > LN2 + 1.0

    def test_single_bin(self):
        rep = mean_growth_report(conditional_stats(growth_rates(np.full(20, 3.0))))
        assert rep.counts.tolist() == [19] and rep.mean_g[0] == pytest.approx(LN2)
