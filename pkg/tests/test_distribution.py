import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from equity_activity.distribution import (
    fit_lognormal,
    max_density_gap,
    moments_vs_interval,
    normalize_logs,
    pdf_histogram,
)
from equity_activity.ingest import SamplingInterval


class TestPdfHistogram:
    def test_lognormal_mass(self):
        x = np.random.default_rng(0).lognormal(0, 1, 10**6)
        pdf = pdf_histogram(x)
        assert pdf.integral() == pytest.approx(1.0, abs=0.02)
        assert pdf.sample_count == 10**6 and pdf.scheme == "log"

    def test_constant_values_single_bin(self):
        pdf = pdf_histogram(np.full(20, 3.0))
        assert np.count_nonzero(pdf.densities) == 1
        assert pdf.integral() == pytest.approx(1.0)

    def test_peak_near_lognormal_mode(self):
        mu, sigma = 1.0, 0.5
        x = np.random.default_rng(1).lognormal(mu, sigma, 10**6)
        pdf = pdf_histogram(x, bins=80)
        peak = pdf.centers[np.argmax(pdf.densities)]
        mode = math.exp(mu - sigma**2)
        assert abs(math.log(peak / mode)) < 0.1

    def test_log_scheme_rejects_nonpositive(self):
        x = np.ones(20)
        x[[3, 7]] = [0.0, -2.0]
        with pytest.raises(ValueError, match="-2.0"):
            pdf_histogram(x)

    def test_needs_ten_values(self):
        with pytest.raises(ValueError):
            pdf_histogram(np.ones(9))

    @pytest.mark.parametrize("scheme", ["log", "linear"])
    @pytest.mark.parametrize("bins", [20, 50, 137])
    def test_mass_for_every_scheme(self, scheme, bins):
        x = np.random.default_rng(bins).lognormal(2, 1.5, 5000)
        assert pdf_histogram(x, bins, scheme).integral() == pytest.approx(1.0, abs=0.05)


class TestNormalizeLogs:
    def test_two_point(self):
        assert np.allclose(normalize_logs([math.e, math.e**3]), [-1.0, 1.0], atol=1e-12)

    def test_idempotent_on_normalized(self):
        z = normalize_logs(np.random.default_rng(2).lognormal(0, 1, 1000))
        again = normalize_logs(np.exp(z))
        assert np.allclose(again, z, atol=1e-9)

    def test_zero_variance(self):
        with pytest.raises(ValueError):
            normalize_logs([5.0, 5.0, 5.0])

    def test_standardized_moments(self):
        z = normalize_logs(np.random.default_rng(3).lognormal(5, 2, 777))
        assert abs(z.mean()) < 1e-9 and abs(z.std() - 1) < 1e-9

    def test_passes_ks_against_standard_normal(self):
        z = normalize_logs(np.random.default_rng(4).lognormal(5, 2, 5000))
        assert stats.kstest(z, "norm").pvalue > 0.01

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, 30, elements=st.floats(1e-6, 1e6)), st.floats(1e-4, 1e4))
    def test_scale_invariance(self, x, c):
        if np.ptp(np.log(x)) < 1e-6:
            return
        assert np.allclose(normalize_logs(c * x), normalize_logs(x), rtol=0, atol=1e-9)


class TestFitLognormal:
    def test_recovers_parameters(self):
        fit = fit_lognormal(np.random.default_rng(5).lognormal(2.0, 0.5, 10**5))
        assert fit.mu == pytest.approx(2.0, abs=0.01)
        assert fit.sigma == pytest.approx(0.5, abs=0.01)
        assert fit.ks < 0.01 and fit.n == 10**5

    def test_constant_sample(self):
        with pytest.raises(ValueError):
            fit_lognormal(np.full(40, 2.0))

    def test_pareto_flagged(self):
        x = np.random.default_rng(6).pareto(1.5, 10**4) + 1.0
        assert fit_lognormal(x).ks > 0.05

    def test_rejects_nonpositive_and_small(self):
        with pytest.raises(ValueError):
            fit_lognormal(np.r_[np.ones(40), 0.0])
        with pytest.raises(ValueError):
            fit_lognormal(np.arange(1.0, 20.0))


class TestMomentsVsInterval:
    def test_mean_log_grows_with_interval(self):
        rng = np.random.default_rng(7)
        fine = rng.lognormal(3, 1, 78 * 200)
        uni = {
            "5m": [fine],
            "30m": [fine.reshape(-1, 6).sum(1)],
            "1d": [fine.reshape(-1, 78).sum(1)],
        }
        rows = moments_vs_interval(uni)
        assert [r.interval for r in rows] == ["5m", "30m", "1d"]
        assert rows[0].mean_log < rows[1].mean_log < rows[2].mean_log

    def test_single_interval(self):
        rows = moments_vs_interval({SamplingInterval(minutes=5): [np.arange(1.0, 50.0)]})
        assert len(rows) == 1

    def test_constant_sigma_generator(self):
        rng = np.random.default_rng(8)
        uni = {lab: [rng.lognormal(mu, 1.2, 20000)] for lab, mu in (("5m", 8), ("30m", 9.8), ("1d", 12.3), ("5d", 13.9))}
        sig = np.array([r.std_log for r in moments_vs_interval(uni)])
        assert np.all(np.abs(sig - 1.2) < 4 * 1.2 / math.sqrt(2 * 20000))

    def test_zeros_excluded_and_counted(self):
        with pytest.warns(UserWarning):
            rows = moments_vs_interval({"5m": [np.array([0.0, 1.0, math.e, 0.0])]})
        assert rows[0].excluded_zeros == 2 and rows[0].n == 2


def test_collapse_of_two_lognormal_sets():
    rng = np.random.default_rng(10)
    a = rng.lognormal(3.0, 0.7, 10**5)
    b = rng.lognormal(11.0, 2.1, 10**5)
    edges = np.linspace(-4, 4, 41)
    pa = pdf_histogram(normalize_logs(a), scheme="linear", edges=edges)
    pb = pdf_histogram(normalize_logs(b), scheme="linear", edges=edges)
    assert max_density_gap(pa, pb) <= 0.05
