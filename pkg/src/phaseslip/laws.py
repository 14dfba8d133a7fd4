"""
Closed-form limit distributions and their samplers.

The laws collected here are all built around the standard Gumbel variable Z
with P(Z <= t) = exp(-exp(-t)):

* ``Gumbel``          location/scale family of Z,
* ``HalfGumbel``      the law of (Z - log 2)/2 + loc, density A(x - loc),
* ``ThetaLaw``        the law of -log|N| + loc with N standard normal,
* ``Logistic``        the law of Z1 - Z2 (two independent Gumbels),
* ``CyclingProfile``  the wrapped law of (Z - log 2)/2 + loc modulo a period,
* ``AsympGeometric``  integer law whose hazard tends to a constant,
* ``Exponential``     the usual one.

Complex Gamma values needed for Fourier coefficients and characteristic
functions are computed with a Lanczos approximation (g = 7, 9 terms).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

LOG2 = math.log(2.0)

# Lanczos coefficients for g = 7, n = 9
_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])


def complex_gamma(z):
    """Euler Gamma function for complex arguments (Lanczos, g=7, n=9).

    Uses the reflection formula for Re(z) < 1/2. Relative accuracy is
    about 1e-13 away from the poles.
    """
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    left = z.real < 0.5
    if np.any(left):
        zl = z[left]
        out[left] = np.pi / (np.sin(np.pi * zl) * _lanczos_right(1.0 - zl))
    if np.any(~left):
        out[~left] = _lanczos_right(z[~left])
    return out if out.ndim else out[()]


def _lanczos_right(z):
    z = z - 1.0
    x = np.full_like(z, _LANCZOS_COEF[0])
    for i in range(1, 9):
        x = x + _LANCZOS_COEF[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return np.sqrt(2.0 * np.pi) * t ** (z + 0.5) * np.exp(-t) * x


# ---------------------------------------------------------------------------
# Gumbel family

def gumbel_cdf(t):
    """Standard Gumbel distribution function exp(-exp(-t))."""
    return np.exp(-np.exp(-np.asarray(t, dtype=float)))


def gumbel_pdf(t):
    t = np.asarray(t, dtype=float)
    return np.exp(-t - np.exp(-t))


def gumbel_sample(rng: np.random.Generator, size=None):
    """Draw standard Gumbel variables as -log(-log U)."""
    u = rng.random(size)
    # U = 0 has probability 2^-53; push it into the open interval
    u = np.where(u == 0.0, np.finfo(float).tiny, u)
    return -np.log(-np.log(u))


def a_density(x):
    """Density A(x) = exp(-2x - exp(-2x)/2) of (Z - log 2)/2."""
    x = np.asarray(x)
    with np.errstate(over="ignore"):
        e = np.exp(-2.0 * x)
        return np.exp(-2.0 * x - 0.5 * e)


def a_cdf(x):
    """Distribution function of (Z - log 2)/2, equal to exp(-exp(-2x)/2)."""
    return np.exp(-0.5 * np.exp(-2.0 * np.asarray(x, dtype=float)))


def a_sample(rng: np.random.Generator, size=None):
    return 0.5 * (gumbel_sample(rng, size) - LOG2)


def gumbel_char(t):
    """Characteristic function E[exp(itZ)] = Gamma(1 - it)."""
    return complex_gamma(1.0 - 1j * np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------
# Theta law: -log|N|

def theta_law_density(t):
    """Density sqrt(2/pi) exp(-t - exp(-2t)/2) of -log|N|."""
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore"):
        return math.sqrt(2.0 / math.pi) * np.exp(-t - 0.5 * np.exp(-2.0 * t))


def theta_law_cdf(t):
    """P(-log|N| <= t) = P(|N| >= exp(-t)) = erfc(exp(-t)/sqrt 2)."""
    return special.erfc(np.exp(-np.asarray(t, dtype=float)) / math.sqrt(2.0))


def theta_law_sample(rng: np.random.Generator, size=None):
    """Draw -log|N| for standard normal N (N = 0 is resampled)."""
    n = rng.standard_normal(size)
    if np.ndim(n) == 0:
        while n == 0.0:
            n = rng.standard_normal()
        return -math.log(abs(n))
    bad = n == 0.0
    while np.any(bad):
        n[bad] = rng.standard_normal(int(bad.sum()))
        bad = n == 0.0
    return -np.log(np.abs(n))


def theta_law_char(t):
    """E[exp(it Theta)] = 2^(-it/2) Gamma((1 - it)/2) / sqrt(pi)."""
    t = np.asarray(t, dtype=float)
    return 2.0 ** (-0.5j * t) * complex_gamma(0.5 * (1.0 - 1j * t)) / math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# Cycling profile Q

def _profile_window(x, lambdaT, lo=-3.0, hi=20.0):
    """Range of n such that lambdaT*(n - x) covers [lo, hi] for all x."""
    xr = np.real(np.asarray(x))
    n_lo = int(math.floor(np.min(xr) + lo / lambdaT)) - 1
    n_hi = int(math.ceil(np.max(xr) + hi / lambdaT)) + 1
    return n_lo, n_hi


def profile_tail_bound(lambdaT: float, lo=-3.0, hi=20.0) -> float:
    """Upper bound on the mass of A neglected outside [lo, hi] (both sides)."""
    # right tail: A(u) <= exp(-2u), geometric over spacing lambdaT
    right = math.exp(-2.0 * hi) / (1.0 - math.exp(-2.0 * lambdaT))
    # left tail is doubly exponential; the first neglected term dominates
    left = math.exp(-2.0 * lo - 0.5 * math.exp(-2.0 * lo))
    left /= 1.0 - math.exp(-min(2.0 * lambdaT, 50.0))
    return right + left


def cycling_profile_sum(x, lambdaT: float, n_window: tuple[int, int] | None = None):
    """Periodic profile Q(x) = sum_n A(lambdaT (n - x)).

    Parameters
    ----------
    x : array_like, real or complex
        Evaluation points. Complex points are allowed; the sum converges for
        any finite imaginary part.
    lambdaT : float
        Product of unstable exponent and orbit period.
    n_window : (int, int), optional
        Inclusive summation range. Chosen from the tail bounds of A when
        omitted; the neglected mass is below ``profile_tail_bound``.
    """
    if lambdaT <= 0:
        raise ValueError("lambdaT must be positive")
    x = np.asarray(x)
    if n_window is None:
        n_window = _profile_window(x, lambdaT)
    n = np.arange(n_window[0], n_window[1] + 1)
    u = lambdaT * (n[:, None] - x.reshape(1, -1))
    # large negative real parts underflow cleanly; clip to avoid overflow
    ur = np.real(u)
    keep = ur > -8.0
    terms = np.zeros(u.shape, dtype=np.result_type(u, float))
    terms[keep] = a_density(u[keep])
    out = terms.sum(axis=0).reshape(x.shape)
    return out if out.ndim else out[()]


def cycling_fourier_coefficients(lambdaT: float, k_max: int):
    """Coefficients a_k, k = -k_max..k_max, of the Fourier series of Q."""
    k = np.arange(-k_max, k_max + 1)
    w = np.pi * 1j * k / lambdaT
    return k, 2.0 ** (-w) * complex_gamma(1.0 - w) / lambdaT


def cycling_profile_fourier(x, lambdaT: float, k_max: int = 64):
    """Fourier-series evaluation of the cycling profile Q."""
    if lambdaT <= 0:
        raise ValueError("lambdaT must be positive")
    x = np.asarray(x, dtype=float)
    k, a = cycling_fourier_coefficients(lambdaT, k_max)
    val = (a[None, :] * np.exp(2j * np.pi * np.outer(x.ravel(), k))).sum(axis=1)
    out = val.real.reshape(x.shape)
    return out if out.ndim else out[()]


# ---------------------------------------------------------------------------
# Checks built from the samplers

@dataclass
class IdentityReport:
    name: str
    statistic: float
    threshold: float
    passed: bool
    n: int
    extra: dict = field(default_factory=dict)


def _trapezoid_char(density, t, lo, hi, n=200001):
    x = np.linspace(lo, hi, n)
    f = density(x)
    h = x[1] - x[0]
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return (np.exp(1j * np.outer(t, x)) * (f * w)[None, :]).sum(axis=1)


def duplication_identity_check(n_samples: int, rng: np.random.Generator,
                               t_grid=None) -> IdentityReport:
    """Compare Z/2 + Theta with Z + log(2)/2.

    Draws two independent samples and runs a two-sample KS test. The
    characteristic functions of both sides are also obtained by quadrature
    of the densities and compared on ``t_grid``.
    """
    from . import stats

    left = 0.5 * gumbel_sample(rng, n_samples) + theta_law_sample(rng, n_samples)
    right = gumbel_sample(rng, n_samples) + 0.5 * LOG2
    ks = stats.ks_2samp(left, right)
    crit = stats.ks_critical(0.01, n_samples, n_samples)

    if t_grid is None:
        t_grid = np.linspace(-5.0, 5.0, 101)
    t_grid = np.asarray(t_grid, dtype=float)
    # Z/2 has density 2 g(2x); sum of independent -> product of transforms
    cf_half_z = _trapezoid_char(lambda x: 2.0 * gumbel_pdf(2.0 * x), t_grid, -6.0, 30.0)
    cf_theta = _trapezoid_char(theta_law_density, t_grid, -6.0, 40.0)
    cf_right = _trapezoid_char(lambda x: gumbel_pdf(x - 0.5 * LOG2), t_grid, -8.0, 45.0)
    cf_err = float(np.max(np.abs(cf_half_z * cf_theta - cf_right)))
    closed = gumbel_char(0.5 * t_grid) * theta_law_char(t_grid)
    closed_err = float(np.max(np.abs(closed - 2.0 ** (0.5j * t_grid) * gumbel_char(t_grid))))
    passed = ks.statistic < crit and cf_err < 1e-6
    return IdentityReport("duplication", ks.statistic, crit, bool(passed), n_samples,
                          {"ks_pvalue": ks.pvalue, "cf_max_error": cf_err,
                           "cf_closed_form_error": closed_err})


def logistic_residence_check(n_samples: int, rng: np.random.Generator) -> IdentityReport:
    """Z1 - Z2 against the logistic law with density sech^2(x/2)/4."""
    from . import stats

    d = gumbel_sample(rng, n_samples) - gumbel_sample(rng, n_samples)
    law = TheoreticalLaw.logistic(0.0, 1.0)
    ks = stats.ks_test(d, law)
    crit = stats.ks_critical(0.01, n_samples)
    var = float(np.var(d, ddof=1))
    rel_var = abs(var / (math.pi ** 2 / 3.0) - 1.0)
    passed = ks.statistic < crit and rel_var < 0.01
    return IdentityReport("logistic", ks.statistic, crit, bool(passed), n_samples,
                          {"mean": float(np.mean(d)), "variance": var,
                           "variance_rel_error": rel_var, "ks_pvalue": ks.pvalue})


@dataclass
class GeometricTailFit:
    p: float
    ci: tuple[float, float]
    window: tuple[int, int]
    at_risk: int
    degenerate: bool
    widened: bool


def _hazard_pool(y, n0, n1):
    ev = np.count_nonzero((y >= n0 + 1) & (y <= n1 + 1))
    # number at risk: sum over n in [n0, n1] of #{Y > n}
    yc = np.clip(y, n0, n1 + 1)
    risk = int(np.sum(yc - n0))
    return ev, risk


def asymp_geometric_tail_fit(samples, rng: np.random.Generator | None = None,
                             min_at_risk: int = 50, n_boot: int = 500,
                             level: float = 0.95) -> GeometricTailFit:
    """Estimate the limiting hazard p = lim P(Y = n+1 | Y > n).

    The hazard is pooled over the upper half of the range of n for which at
    least ``min_at_risk`` samples exceed n. A percentile bootstrap gives the
    confidence interval.
    """
    y = np.asarray(samples)
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise ValueError("samples must be integers")
        y = y.astype(np.int64)
    if rng is None:
        rng = np.random.default_rng(0)
    nan = float("nan")
    if y.size == 0 or np.unique(y).size < 2:
        return GeometricTailFit(nan, (nan, nan), (0, 0), 0, True, True)
    y_min = int(y.min())
    ys = np.sort(y)
    # largest n with #{Y > n} >= min_at_risk
    widened = False
    if y.size >= min_at_risk:
        n_max = int(ys[y.size - min_at_risk]) - 1
    else:
        n_max = int(ys[0]) - 1
    if n_max < y_min:
        widened = True
        n_max = max(int(ys[-1]) - 1, y_min)
    n0 = y_min + (n_max - y_min + 1) // 2
    n1 = n_max
    ev, risk = _hazard_pool(y, n0, n1)
    if risk == 0:
        return GeometricTailFit(nan, (nan, nan), (n0, n1), 0, True, True)
    p = ev / risk
    degenerate = ev == 0 or ev == risk and n1 == n0
    boots = np.empty(n_boot)
    for b in range(n_boot):
        yb = y[rng.integers(0, y.size, y.size)]
        e, r = _hazard_pool(yb, n0, n1)
        boots[b] = e / r if r else nan
    a = 0.5 * (1.0 - level)
    lo, hi = np.nanquantile(boots, [a, 1.0 - a])
    if risk < 10 * min_at_risk:
        widened = True
    return GeometricTailFit(float(p), (float(lo), float(hi)), (n0, n1), risk,
                            bool(degenerate), widened)


# ---------------------------------------------------------------------------
# Law objects

FAMILIES = ("Gumbel", "HalfGumbel", "ThetaLaw", "Logistic", "CyclingProfile",
            "AsympGeometric", "Exponential")


@dataclass(frozen=True)
class TheoreticalLaw:
    """A closed-form limit law.

    Attributes
    ----------
    family : str
        One of ``FAMILIES``.
    params : dict
        ``loc``/``scale`` for location-scale families, ``lambdaT`` and ``loc``
        for the cycling profile (support [0, lambdaT)), ``p`` for the
        asymptotically geometric law (support 0, 1, 2, ...), ``rate`` for the
        exponential.
    """

    family: str
    params: dict

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")

    # constructors
    @classmethod
    def gumbel(cls, loc=0.0, scale=1.0):
        return cls("Gumbel", {"loc": float(loc), "scale": float(scale)})

    @classmethod
    def half_gumbel(cls, loc=0.0):
        return cls("HalfGumbel", {"loc": float(loc)})

    @classmethod
    def theta(cls, loc=0.0):
        return cls("ThetaLaw", {"loc": float(loc)})

    @classmethod
    def logistic(cls, loc=0.0, scale=1.0):
        return cls("Logistic", {"loc": float(loc), "scale": float(scale)})

    @classmethod
    def cycling(cls, lambdaT, loc=0.0):
        return cls("CyclingProfile", {"lambdaT": float(lambdaT), "loc": float(loc)})

    @classmethod
    def geometric(cls, p):
        return cls("AsympGeometric", {"p": float(p)})

    @classmethod
    def exponential(cls, rate=1.0):
        return cls("Exponential", {"rate": float(rate)})

    @property
    def is_discrete(self) -> bool:
        return self.family == "AsympGeometric"

    @property
    def is_circular(self) -> bool:
        return self.family == "CyclingProfile"

    @property
    def period(self) -> float | None:
        return self.params["lambdaT"] if self.is_circular else None

    def _shift(self, x):
        return np.asarray(x, dtype=float) - self.params.get("loc", 0.0)

    def pdf(self, x):
        f, p = self.family, self.params
        if f == "Gumbel":
            s = p["scale"]
            return gumbel_pdf(self._shift(x) / s) / s
        if f == "HalfGumbel":
            return a_density(self._shift(x))
        if f == "ThetaLaw":
            return theta_law_density(self._shift(x))
        if f == "Logistic":
            s = p["scale"]
            u = self._shift(x) / (2.0 * s)
            return 0.25 / s / np.cosh(u) ** 2
        if f == "CyclingProfile":
            L = p["lambdaT"]
            v = np.mod(np.asarray(x, dtype=float), L)
            # sum over translates of A(v - loc + nL); Q evaluated at -(v-loc)/L
            return cycling_profile_sum(-(v - p["loc"]) / L, L)
        if f == "AsympGeometric":
            k = np.asarray(x)
            pk = p["p"] * (1.0 - p["p"]) ** np.maximum(k, 0)
            return np.where((k >= 0) & (k == np.floor(k)), pk, 0.0)
        if f == "Exponential":
            x = np.asarray(x, dtype=float)
            return np.where(x >= 0, p["rate"] * np.exp(-p["rate"] * np.maximum(x, 0)), 0.0)
        raise AssertionError

    def cdf(self, x):
        f, p = self.family, self.params
        if f == "Gumbel":
            return gumbel_cdf(self._shift(x) / p["scale"])
        if f == "HalfGumbel":
            return a_cdf(self._shift(x))
        if f == "ThetaLaw":
            return theta_law_cdf(self._shift(x))
        if f == "Logistic":
            return special.expit(self._shift(x) / p["scale"])
        if f == "CyclingProfile":
            L, loc = p["lambdaT"], p["loc"]
            v = np.clip(np.asarray(x, dtype=float), 0.0, L)
            n_lo = int(math.floor((loc - 4.0) / L)) - 1
            n_hi = int(math.ceil((loc + 40.0) / L)) + 1
            n = np.arange(n_lo, n_hi + 1)
            base = n * L - loc
            c = a_cdf(v.reshape(-1, 1) + base[None, :]) - a_cdf(base)[None, :]
            return c.sum(axis=1).reshape(v.shape)
        if f == "AsympGeometric":
            k = np.floor(np.asarray(x, dtype=float))
            return np.where(k >= 0, 1.0 - (1.0 - p["p"]) ** (k + 1), 0.0)
        if f == "Exponential":
            x = np.asarray(x, dtype=float)
            return np.where(x >= 0, -np.expm1(-p["rate"] * np.maximum(x, 0)), 0.0)
        raise AssertionError

    def sample(self, rng: np.random.Generator, size=None):
        f, p = self.family, self.params
        if f == "Gumbel":
            return p["loc"] + p["scale"] * gumbel_sample(rng, size)
        if f == "HalfGumbel":
            return p["loc"] + a_sample(rng, size)
        if f == "ThetaLaw":
            return p["loc"] + theta_law_sample(rng, size)
        if f == "Logistic":
            return p["loc"] + p["scale"] * (gumbel_sample(rng, size) - gumbel_sample(rng, size))
        if f == "CyclingProfile":
            return np.mod(p["loc"] + a_sample(rng, size), p["lambdaT"])
        if f == "AsympGeometric":
            return rng.geometric(p["p"], size) - 1
        if f == "Exponential":
            return rng.exponential(1.0 / p["rate"], size)
        raise AssertionError

    def support(self) -> tuple[float, float]:
        """Interval carrying all but ~1e-16 of the mass."""
        f, p = self.family, self.params
        loc = p.get("loc", 0.0)
        if f == "Gumbel":
            return loc - 4.0 * p["scale"], loc + 40.0 * p["scale"]
        if f in ("HalfGumbel", "ThetaLaw"):
            return loc - 3.0, loc + 40.0
        if f == "Logistic":
            return loc - 40.0 * p["scale"], loc + 40.0 * p["scale"]
        if f == "CyclingProfile":
            return 0.0, p["lambdaT"]
        if f == "AsympGeometric":
            return 0.0, math.ceil(40.0 / -math.log1p(-p["p"])) if p["p"] < 1 else 0.0
        return 0.0, 40.0 / p["rate"]

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params}


def law_from_dict(d: dict) -> TheoreticalLaw:
    d = dict(d)
    fam = d.pop("family")
    return TheoreticalLaw(fam, {k: float(v) for k, v in d.items()})


def law_table(law: TheoreticalLaw, grid) -> np.ndarray:
    """Columns (x, pdf, cdf) on ``grid``; used by the law-evaluation CLI."""
    x = np.asarray(grid, dtype=float)
    return np.column_stack([x, law.pdf(x), law.cdf(x)])
