import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose
from scipy import stats as sps

from phaseslip import stats
from phaseslip.laws import TheoreticalLaw, gumbel_cdf

samples = arrays(np.float64, st.integers(5, 200), elements=st.floats(-50, 50, allow_nan=False))


# ---------------------------------------------------------------------------
# empirical distribution

def test_empirical_sorted_and_weights_normalized():
    e = stats.EmpiricalDistribution(np.array([3.0, 1.0, 2.0]), np.array([1.0, 1.0, 2.0]))
    assert_allclose(e.values, [1, 2, 3])
    assert_allclose(e.weights.sum(), 1.0)
    assert_allclose(e.cdf([0.5, 1.0, 2.5, 3.0]), [0.0, 0.25, 0.75, 1.0])


def test_empirical_rejects_negative_weights():
    with pytest.raises(ValueError):
        stats.EmpiricalDistribution(np.array([1.0, 2.0]), np.array([1.0, -1.0]))


# ---------------------------------------------------------------------------
# KS

def test_ks_matches_scipy():
    rng = np.random.default_rng(201)
    x = rng.gumbel(0.2, 1.0, 5000)
    ours = stats.ks_test(x, TheoreticalLaw.gumbel())
    ref = sps.kstest(x, sps.gumbel_r.cdf)
    assert_allclose(ours.statistic, ref.statistic, rtol=1e-12)


def test_two_sample_ks_matches_scipy():
    rng = np.random.default_rng(202)
    a, b = rng.normal(size=700), rng.normal(0.1, 1, size=1100)
    assert_allclose(stats.ks_2samp(a, b).statistic, sps.ks_2samp(a, b).statistic, rtol=1e-12)


def test_kolmogorov_series_matches_scipy():
    lam = np.linspace(0.3, 3.0, 28)
    assert_allclose(stats.kolmogorov_sf(lam), sps.kstwobign.sf(lam), atol=1e-12)


def test_ks_critical_value():
    assert_allclose(stats.ks_critical(0.01, 10**4) * 100, sps.kstwobign.isf(0.01), rtol=1e-9)
    assert_allclose(stats.ks_critical(0.01, 1), 1.6276, atol=1e-4)


def test_ks_calibration():
    # sample from the law itself: p > 0.01 in at least 98 of 100 repetitions
    law = TheoreticalLaw.gumbel()
    ok = 0
    for i in range(100):
        x = law.sample(np.random.default_rng(1000 + i), 10**4)
        ok += stats.ks_test(x, law).pvalue > 0.01
    assert ok >= 98


def test_ks_constant_sample():
    d = stats.ks_test(np.zeros(100), TheoreticalLaw.gumbel(5.0)).statistic
    assert d >= 0.5


@given(samples)
def test_ks_statistic_in_unit_interval(x):
    d = stats.ks_test(x, TheoreticalLaw.logistic()).statistic
    assert 0.0 <= d <= 1.0


@settings(max_examples=30)
@given(samples, st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_ks_invariant_under_monotone_relabeling(x, a, b):
    # y = a x + b, law transformed accordingly
    law = TheoreticalLaw.gumbel()
    d0 = stats.ks_test(x, law).statistic
    d1 = stats.ks_test(a * x + b, lambda y: gumbel_cdf((y - b) / a)).statistic
    assert_allclose(d0, d1, atol=1e-9)


def test_ks_discrete_exact_geometric():
    law = TheoreticalLaw.geometric(0.3)
    y = law.sample(np.random.default_rng(203), 10**5)
    assert stats.ks_test(y, law).statistic < stats.ks_critical(0.01, y.size)


def test_ks_rejects_non_law():
    with pytest.raises(TypeError):
        stats.ks_test(np.arange(60.0), 3.0)


# ---------------------------------------------------------------------------
# Kuiper

@settings(max_examples=30)
@given(arrays(np.float64, st.integers(5, 200), elements=st.floats(0, 10, allow_nan=False)),
       st.floats(-20, 20))
def test_kuiper_rotation_invariant(x, c):
    L = 2 * math.pi
    v0 = stats.kuiper_test_circular(x, L).statistic
    v1 = stats.kuiper_test_circular(x + c, L).statistic
    assert abs(v0 - v1) < 1e-12 + 1e-12 * x.size


def test_kuiper_brute_force():
    rng = np.random.default_rng(204)
    x = rng.random(300) ** 1.5
    v = stats.kuiper_test_circular(x, 1.0).statistic
    # sup and inf of F_n - F over both sides of every jump
    u = np.sort(x)
    i = np.arange(1, u.size + 1)
    brute = np.max(i / u.size - u) + np.max(u - (i - 1) / u.size)
    assert_allclose(v, brute, rtol=1e-12)


def test_kuiper_calibration():
    ok = 0
    for i in range(100):
        x = np.random.default_rng(2000 + i).random(10**4) * 3.0
        ok += stats.kuiper_test_circular(x, 3.0).statistic < stats.kuiper_critical(0.01, 10**4)
    assert ok >= 98


def test_kuiper_point_mass():
    v = stats.kuiper_test_circular(np.full(5000, 0.3), 1.0).statistic
    assert v > 0.99


def test_kuiper_critical_value():
    assert_allclose(stats.kuiper_critical(0.05, 1), 1.747, atol=2e-3)


def test_kuiper_two_sample_rotation_invariant():
    rng = np.random.default_rng(205)
    a, b = rng.random(400) * 2, rng.random(500) * 2
    v0 = stats.kuiper_2samp_circular(a, b, 2.0).statistic
    v1 = stats.kuiper_2samp_circular(a + 0.77, b + 0.77, 2.0).statistic
    assert_allclose(v0, v1, atol=1e-12)


def test_kuiper_rejects_bad_period():
    with pytest.raises(ValueError):
        stats.kuiper_test_circular([0.1], 0.0)


def test_circular_mean():
    assert_allclose(stats.circular_mean([0.9, 0.1], 1.0) % 1.0, 0.0, atol=1e-12)
    assert_allclose(stats.circular_mean([0.2, 0.4], 1.0), 0.3, atol=1e-12)


# ---------------------------------------------------------------------------
# location fits

def test_gumbel_location_recovered():
    x = TheoreticalLaw.gumbel(2.0).sample(np.random.default_rng(206), 10**5)
    fit = stats.gumbel_location_fit(x, rng=np.random.default_rng(1), n_boot=200)
    assert fit.ci[0] - 1e-3 <= 2.0 <= fit.ci[1] + 1e-3
    assert abs(fit.loc - 2.0) < 4 * fit.se


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-20, 20)),
       st.floats(-100, 100), st.sampled_from([0.5, 1.0]))
def test_gumbel_mle_equivariant(x, c, s):
    assert_allclose(stats.gumbel_location_mle(x + c, s), stats.gumbel_location_mle(x, s) + c,
                    atol=1e-9)


def test_gumbel_mle_single_point():
    assert stats.gumbel_location_mle(np.array([1.7])) == pytest.approx(1.7, abs=1e-15)
    fit = stats.gumbel_location_fit([1.7])
    assert fit.loc == pytest.approx(1.7) and fit.ci == (fit.loc, fit.loc)


def test_bootstrap_coverage():
    # percentile CI covers the true location in at least 90 of 100 repetitions
    hits = 0
    for i in range(100):
        rng = np.random.default_rng(3000 + i)
        x = TheoreticalLaw.gumbel(0.5).sample(rng, 400)
        fit = stats.gumbel_location_fit(x, rng=rng, n_boot=200)
        hits += fit.ci[0] <= 0.5 <= fit.ci[1]
    assert hits >= 90


@pytest.mark.parametrize("law", [TheoreticalLaw.half_gumbel(0.3), TheoreticalLaw.theta(-0.2),
                                 TheoreticalLaw.gumbel(0.1), TheoreticalLaw.exponential(2.0)],
                         ids=lambda l: l.family)
def test_law_mean_by_sampling(law):
    x = law.sample(np.random.default_rng(207), 10**6)
    assert abs(x.mean() - stats.law_mean(law)) < 5 * x.std() / 1000


def test_shift_location_fit():
    x = TheoreticalLaw.theta(0.8).sample(np.random.default_rng(208), 10**5)
    fit = stats.shift_location_fit(x, TheoreticalLaw.theta(0.0), rng=np.random.default_rng(3),
                                   n_boot=200)
    assert abs(fit.loc - 0.8) < 4 * fit.se


def test_parametric_bootstrap_calibrated():
    rng = np.random.default_rng(209)
    x = TheoreticalLaw.gumbel(1.3).sample(rng, 2000)
    res = stats.ks_parametric_bootstrap(x, lambda m: TheoreticalLaw.gumbel(m),
                                        stats.gumbel_location_mle, rng, n_boot=200)
    assert res.pvalue > 0.01
    y = TheoreticalLaw.logistic(0.0).sample(rng, 2000)
    res = stats.ks_parametric_bootstrap(y, lambda m: TheoreticalLaw.gumbel(m),
                                        stats.gumbel_location_mle, rng, n_boot=200)
    assert res.pvalue < 0.01


# ---------------------------------------------------------------------------
# helpers and reports

def test_binomial_within():
    assert stats.binomial_within(5000, 10**4, 0.5)
    assert not stats.binomial_within(5200, 10**4, 0.5)


def test_permutation_ks_same_law():
    rng = np.random.default_rng(210)
    p = stats.permutation_ks(rng.normal(size=300), rng.normal(size=300), rng, n_perm=200)
    assert p > 0.01


def test_monotone_decreasing():
    assert stats.is_monotone_decreasing([0.3, 0.2, 0.1])
    assert not stats.is_monotone_decreasing([0.3, 0.3, 0.1])


def test_check_report_json():
    rep = stats.CheckReport("x", np.float64(0.1), 0.2, np.bool_(True), n=np.int64(10), seed=4,
                            detail={"arr": np.arange(2), "inf": math.inf})
    d = json.loads(rep.to_json())
    assert d["passed"] is True and d["n"] == 10 and d["detail"]["arr"] == [0, 1]
    assert d["detail"]["inf"] == "inf"
