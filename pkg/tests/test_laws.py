import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, optimize
from scipy import stats as sps

from phaseslip import laws
from phaseslip.laws import TheoreticalLaw
from phaseslip.stats import ks_critical, ks_test

LOG2 = math.log(2.0)
finite_x = st.floats(-5.0, 5.0, allow_nan=False)


# ---------------------------------------------------------------------------
# Gumbel

def test_gumbel_cdf_at_zero():
    assert_allclose(laws.gumbel_cdf(0.0), math.exp(-1.0), rtol=0, atol=1e-16)


def test_gumbel_matches_scipy():
    x = np.linspace(-4, 12, 161)
    assert_allclose(laws.gumbel_cdf(x), sps.gumbel_r.cdf(x), rtol=1e-13, atol=1e-300)
    assert_allclose(laws.gumbel_pdf(x), sps.gumbel_r.pdf(x), rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("x", [-1.0, 0.0, 2.0])
def test_gumbel_max_stability_points(x):
    # max of two iid copies is the law shifted by log 2
    assert abs(laws.gumbel_cdf(x) ** 2 - laws.gumbel_cdf(x - LOG2)) < 1e-12


@pytest.mark.parametrize("x", [-1.0, 0.0, 1.0])
def test_gumbel_self_map_points(x):
    assert abs(laws.gumbel_cdf(math.exp(-x)) - math.exp(-laws.gumbel_cdf(x))) < 1e-12


@given(finite_x)
def test_gumbel_functional_equations(x):
    assert abs(laws.gumbel_cdf(x) ** 2 - laws.gumbel_cdf(x - LOG2)) < 1e-12
    assert abs(laws.gumbel_cdf(math.exp(-x)) - math.exp(-laws.gumbel_cdf(x))) < 1e-12


def test_gumbel_char_at_zero():
    assert_allclose(laws.gumbel_char(0.0), 1.0, atol=1e-14)


def test_complex_gamma_against_mpmath():
    z = np.array([1 - 0.5j, 0.5 + 2j, 1 - 3.1j, 0.25 + 0.1j, 3.0 + 0j, 1 - 12j])
    ref = np.array([complex(mpmath.gamma(complex(v))) for v in z])
    assert_allclose(laws.complex_gamma(z), ref, rtol=1e-13)


# ---------------------------------------------------------------------------
# A-density

def test_a_density_mode():
    res = optimize.minimize_scalar(lambda x: -laws.a_density(x), bounds=(-2, 2),
                                   method="bounded", options={"xatol": 1e-10})
    assert_allclose(res.x, -0.5 * LOG2, atol=1e-6)


def test_a_density_normalized():
    val, _ = integrate.quad(laws.a_density, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)
    assert abs(val - 1.0) < 1e-10


def test_a_cdf_differentiates_to_density():
    x = np.linspace(-2, 4, 61)
    h = 1e-5
    fd = (laws.a_cdf(x + h) - laws.a_cdf(x - h)) / (2 * h)
    assert_allclose(fd, laws.a_density(x), atol=1e-9)


def test_a_sampler_matches_density():
    rng = np.random.default_rng(101)
    n = 10**6
    x = laws.a_sample(rng, n)
    assert ks_test(x, laws.a_cdf).statistic < ks_critical(0.01, n)


# ---------------------------------------------------------------------------
# Theta law

def test_theta_density_normalized():
    val, _ = integrate.quad(laws.theta_law_density, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)
    assert abs(val - 1.0) < 1e-10


def test_theta_cdf_at_zero():
    assert_allclose(laws.theta_law_cdf(0.0), 2 * sps.norm.sf(1.0), rtol=1e-14)
    assert_allclose(laws.theta_law_cdf(0.0), 0.317311, atol=1e-6)


def test_theta_char_at_unit_frequency():
    ref = complex(2 ** (-0.5j) * mpmath.gamma(0.5 - 0.5j) / mpmath.sqrt(mpmath.pi))
    assert abs(laws.theta_law_char(1.0) - ref) < 1e-6
    # quadrature of the density as an independent route
    re, _ = integrate.quad(lambda t: math.cos(t) * laws.theta_law_density(t), -8, 40, limit=400)
    im, _ = integrate.quad(lambda t: math.sin(t) * laws.theta_law_density(t), -8, 40, limit=400)
    assert abs(laws.theta_law_char(1.0) - complex(re, im)) < 1e-6


def test_theta_sampler_matches_density():
    rng = np.random.default_rng(102)
    n = 10**6
    x = laws.theta_law_sample(rng, n)
    assert ks_test(x, laws.theta_law_cdf).statistic < ks_critical(0.01, n)


# ---------------------------------------------------------------------------
# cycling profile

@pytest.mark.parametrize("lambdaT", [1.0, 2 * math.pi, 10.0])
def test_profile_periodic(lambdaT):
    for x in (0.1, 0.37):
        assert_allclose(laws.cycling_profile_sum(x + 1, lambdaT),
                        laws.cycling_profile_sum(x, lambdaT), rtol=0, atol=1e-10)


@pytest.mark.parametrize("lambdaT", [1.0, 2 * math.pi, 10.0])
def test_profile_integral(lambdaT):
    val, _ = integrate.quad(lambda x: laws.cycling_profile_sum(x, lambdaT), 0, 1,
                            epsabs=1e-13, epsrel=1e-13, limit=200)
    assert abs(val - 1.0 / lambdaT) < 1e-8
    _, a = laws.cycling_fourier_coefficients(lambdaT, 0)
    a0 = a[0]
    assert abs(a0 - 1.0 / lambdaT) < 1e-12


@pytest.mark.parametrize("lambdaT", [1.0, 2 * math.pi, 10.0])
def test_profile_sum_vs_fourier(lambdaT):
    x = np.arange(256) / 256
    s = laws.cycling_profile_sum(x, lambdaT)
    f = laws.cycling_profile_fourier(x, lambdaT, k_max=64)
    assert np.max(np.abs(s - f)) < 1e-8


def test_profile_quarter_point():
    L = 2 * math.pi
    assert abs(laws.cycling_profile_sum(0.25, L) - laws.cycling_profile_fourier(0.25, L, 64)) < 1e-8


@pytest.mark.parametrize("lambdaT", [1.0, 2 * math.pi, 10.0])
def test_profile_elliptic_period(lambdaT):
    z = np.linspace(0, 1, 17)
    shifted = laws.cycling_profile_sum(z + 1j * math.pi / lambdaT, lambdaT)
    assert np.max(np.abs(shifted - laws.cycling_profile_sum(z, lambdaT))) < 1e-8


def test_profile_tail_bound_small():
    for L in (1.0, 2 * math.pi, 10.0):
        assert laws.profile_tail_bound(L) < 1e-12


# ---------------------------------------------------------------------------
# identities

def test_duplication_identity():
    rep = laws.duplication_identity_check(10**6, np.random.default_rng(103))
    assert rep.statistic < rep.threshold
    assert rep.extra["cf_max_error"] < 1e-6
    assert rep.extra["cf_closed_form_error"] < 1e-10
    assert rep.passed


def test_logistic_residence():
    rep = laws.logistic_residence_check(10**6, np.random.default_rng(104))
    assert abs(rep.extra["mean"]) < 5 * math.pi / math.sqrt(3 * 10**6)
    assert rep.extra["variance_rel_error"] < 0.01
    assert rep.passed


def test_logistic_law_is_gumbel_difference():
    # density of Z1 - Z2 by convolution quadrature
    law = TheoreticalLaw.logistic()
    for x in (-2.0, 0.0, 0.7, 3.0):
        conv, _ = integrate.quad(lambda z: laws.gumbel_pdf(z) * laws.gumbel_pdf(z - x), -10, 40)
        assert_allclose(law.pdf(x), conv, rtol=1e-8)


# ---------------------------------------------------------------------------
# asymptotically geometric tail

def test_geometric_fit_exact():
    rng = np.random.default_rng(105)
    y = rng.geometric(0.3, 10**5) - 1
    fit = laws.asymp_geometric_tail_fit(y, rng=np.random.default_rng(1), n_boot=300)
    half = 0.5 * (fit.ci[1] - fit.ci[0])
    assert abs(fit.p - 0.3) < 3 * half
    assert not fit.degenerate


def test_geometric_fit_degenerate():
    fit = laws.asymp_geometric_tail_fit(np.full(2000, 5))
    assert fit.degenerate
    assert math.isnan(fit.p)


def test_geometric_fit_mixture():
    rng = np.random.default_rng(106)
    n = 10**5
    head = rng.choice([0, 1, 2], size=n, p=[0.5, 0.3, 0.2])
    tail = 3 + rng.geometric(0.4, n) - 1
    y = np.where(rng.random(n) < 0.6, head, tail)
    fit = laws.asymp_geometric_tail_fit(y, rng=np.random.default_rng(2), n_boot=300)
    assert fit.ci[0] <= 0.4 <= fit.ci[1]


def test_geometric_fit_rejects_non_integers():
    with pytest.raises(ValueError):
        laws.asymp_geometric_tail_fit(np.array([0.5, 1.0, 2.0]))


# ---------------------------------------------------------------------------
# law objects

CONTINUOUS = [
    TheoreticalLaw.gumbel(0.3, 1.0),
    TheoreticalLaw.gumbel(-1.0, 0.5),
    TheoreticalLaw.half_gumbel(0.2),
    TheoreticalLaw.theta(-0.4),
    TheoreticalLaw.logistic(0.1, 1.0),
    TheoreticalLaw.cycling(2 * math.pi, 0.0),
    TheoreticalLaw.cycling(1.0, 0.4),
    TheoreticalLaw.exponential(2.0),
]


@pytest.mark.parametrize("law", CONTINUOUS, ids=lambda l: l.family)
def test_density_integrates_to_one(law):
    lo, hi = law.support()
    val, _ = integrate.quad(law.pdf, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=500)
    assert abs(val - 1.0) < 1e-8


@pytest.mark.parametrize("law", CONTINUOUS, ids=lambda l: l.family)
def test_sampler_matches_cdf(law):
    rng = np.random.default_rng(107)
    n = 10**6
    x = law.sample(rng, n)
    assert ks_test(x, law).statistic < 1.63 / math.sqrt(n)


@pytest.mark.parametrize("law", CONTINUOUS, ids=lambda l: l.family)
def test_cdf_is_integral_of_pdf(law):
    lo, hi = law.support()
    xs = np.linspace(max(lo, law.params.get("loc", 0) - 2), min(hi, law.params.get("loc", 0) + 4), 7)
    for x in xs:
        val, _ = integrate.quad(law.pdf, lo, x, epsabs=1e-12, limit=500)
        assert_allclose(law.cdf(x), val, atol=1e-8)


def test_geometric_law_pmf_and_sampler():
    law = TheoreticalLaw.geometric(0.25)
    k = np.arange(200)
    assert_allclose(law.pdf(k).sum(), 1.0, atol=1e-12)
    assert_allclose(np.cumsum(law.pdf(k))[:10], law.cdf(k[:10]), rtol=1e-12)
    y = law.sample(np.random.default_rng(108), 10**5)
    assert y.min() == 0
    assert abs(y.mean() - 3.0) < 4 * math.sqrt(0.75 / 0.25**2 / 10**5)


def test_unknown_family_rejected():
    with pytest.raises(ValueError):
        TheoreticalLaw("Weibull", {})


@given(st.sampled_from(CONTINUOUS + [TheoreticalLaw.geometric(0.3)]))
def test_law_dict_round_trip(law):
    assert laws.law_from_dict(law.to_dict()) == law


@settings(max_examples=50)
@given(st.floats(0.2, 15.0), st.floats(-3.0, 3.0), st.floats(0.0, 1.0))
def test_cycling_pdf_periodic_and_positive(lambdaT, loc, u):
    law = TheoreticalLaw.cycling(lambdaT, loc)
    x = u * lambdaT
    assert law.pdf(x) >= 0
    assert_allclose(law.pdf(x + lambdaT), law.pdf(x), rtol=1e-10, atol=1e-14)


@settings(max_examples=50)
@given(st.sampled_from(CONTINUOUS), finite_x, st.floats(0.0, 3.0))
def test_cdf_monotone(law, x, dx):
    assert law.cdf(x + dx) >= law.cdf(x) - 1e-15


def test_law_table_columns():
    tab = laws.law_table(TheoreticalLaw.gumbel(), np.array([-1.0, 0.0, 1.0]))
    assert tab.shape == (3, 3)
    assert_allclose(tab[1], [0.0, math.exp(-1), math.exp(-1)])
