"""
Goodness-of-fit tests and interval estimates used by the experiments.

Kolmogorov-Smirnov (one and two sample) with the asymptotic Kolmogorov
series, Kuiper's circular test, the closed-form Gumbel location MLE, and
bootstrap helpers. Reports serialize to JSON.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .laws import TheoreticalLaw


@dataclass
class EmpiricalDistribution:
    """Sorted sample with optional weights."""

    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        order = np.argsort(v, kind="stable")
        self.values = v[order]
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).ravel()[order]
            if np.any(w < 0):
                raise ValueError("negative weights")
            self.weights = w / w.sum()

    @property
    def n(self) -> int:
        return self.values.size

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.values, x, side="right")
        if self.weights is None:
            return idx / self.n
        cw = np.concatenate([[0.0], np.cumsum(self.weights)])
        return cw[idx]


@dataclass
class TestResult:
    statistic: float
    pvalue: float
    n: int


def kolmogorov_sf(lam, terms: int = 20):
    """P(sup|B| > lam) for a Brownian bridge: 2 sum (-1)^(k-1) exp(-2k^2 lam^2)."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    out = np.ones_like(lam)
    big = lam > 0.25
    k = np.arange(1, terms + 1)
    sign = np.where(k % 2 == 1, 1.0, -1.0)
    s = 2.0 * (sign[None, :] * np.exp(-2.0 * np.outer(lam[big] ** 2, k ** 2))).sum(axis=1)
    out[big] = np.clip(s, 0.0, 1.0)
    return out if out.size > 1 else float(out[0])


def kuiper_sf(lam, terms: int = 20):
    """Asymptotic tail 2 sum (4k^2 lam^2 - 1) exp(-2k^2 lam^2) of Kuiper's V."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    out = np.ones_like(lam)
    big = lam > 0.4
    k = np.arange(1, terms + 1)
    l2 = np.outer(lam[big] ** 2, k ** 2)
    s = 2.0 * ((4.0 * l2 - 1.0) * np.exp(-2.0 * l2)).sum(axis=1)
    out[big] = np.clip(s, 0.0, 1.0)
    return out if out.size > 1 else float(out[0])


def _n_eff(n: int, m: int | None) -> float:
    return n if m is None else n * m / (n + m)


def ks_critical(alpha: float, n: int, m: int | None = None) -> float:
    """Asymptotic KS critical value at level alpha (1.628/sqrt(n) at 1%)."""
    lam = optimize.brentq(lambda x: kolmogorov_sf(x) - alpha, 0.3, 5.0)
    return lam / math.sqrt(_n_eff(n, m))


def kuiper_critical(alpha: float, n: int, m: int | None = None) -> float:
    """Asymptotic Kuiper critical value (1.747/sqrt(n) at 5%)."""
    lam = optimize.brentq(lambda x: kuiper_sf(x) - alpha, 0.5, 5.0)
    return lam / math.sqrt(_n_eff(n, m))


def _as_sorted(sample) -> np.ndarray:
    if isinstance(sample, EmpiricalDistribution):
        return sample.values
    return np.sort(np.asarray(sample, dtype=float).ravel())


def _one_sample_d(u: np.ndarray) -> tuple[float, float]:
    """D+ and D- for sorted probability-integral transforms u."""
    n = u.size
    i = np.arange(1, n + 1)
    d_plus = float(np.max(i / n - u)) if n else 0.0
    d_minus = float(np.max(u - (i - 1) / n)) if n else 0.0
    return d_plus, d_minus


def ks_test(sample, law: TheoreticalLaw | Callable) -> TestResult:
    """One-sample KS test of ``sample`` against a law (or a CDF callable).

    For discrete laws the statistic is evaluated at the jump points from
    both sides.
    """
    x = _as_sorted(sample)
    if isinstance(law, TheoreticalLaw):
        if law.is_discrete:
            return _ks_discrete(x, law)
        cdf = law.cdf
    elif callable(law):
        cdf = law
    else:
        raise TypeError("law must provide a CDF")
    u = np.clip(np.asarray(cdf(x), dtype=float), 0.0, 1.0)
    d = max(_one_sample_d(u))
    n = x.size
    return TestResult(d, kolmogorov_sf(math.sqrt(n) * d), n)


def _ks_discrete(x, law):
    vals = np.unique(x)
    emp = np.searchsorted(x, vals, side="right") / x.size
    emp_left = np.searchsorted(x, vals, side="left") / x.size
    d = float(max(np.max(np.abs(emp - law.cdf(vals))),
                  np.max(np.abs(emp_left - law.cdf(vals - 1)))))
    return TestResult(d, kolmogorov_sf(math.sqrt(x.size) * d), x.size)


def ks_2samp(a, b) -> TestResult:
    """Two-sample KS statistic with the asymptotic p-value."""
    a = _as_sorted(a)
    b = _as_sorted(b)
    allv = np.concatenate([a, b])
    fa = np.searchsorted(a, allv, side="right") / a.size
    fb = np.searchsorted(b, allv, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    ne = _n_eff(a.size, b.size)
    return TestResult(d, kolmogorov_sf(math.sqrt(ne) * d), int(a.size + b.size))


def kuiper_test_circular(sample, period: float, cdf: Callable | None = None) -> TestResult:
    """Kuiper test of circular data against a law on [0, period).

    Parameters
    ----------
    sample : array_like
        Observations; reduced modulo ``period``.
    period : float
        Circumference L.
    cdf : callable, optional
        Distribution function on [0, L) with cdf(0) = 0, cdf(L) = 1.
        Uniform when omitted.
    """
    if period <= 0:
        raise ValueError("period must be positive")
    x = np.sort(np.mod(np.asarray(sample, dtype=float).ravel(), period))
    u = x / period if cdf is None else np.clip(np.asarray(cdf(x), dtype=float), 0.0, 1.0)
    dp, dm = _one_sample_d(u)
    v = dp + dm
    n = x.size
    lam = (math.sqrt(n) + 0.155 + 0.24 / math.sqrt(n)) * v
    return TestResult(v, kuiper_sf(lam), n)


def kuiper_2samp_circular(a, b, period: float) -> TestResult:
    """Two-sample Kuiper statistic for circular samples."""
    a = np.sort(np.mod(np.asarray(a, dtype=float), period))
    b = np.sort(np.mod(np.asarray(b, dtype=float), period))
    allv = np.concatenate([a, b])
    diff = (np.searchsorted(a, allv, side="right") / a.size
            - np.searchsorted(b, allv, side="right") / b.size)
    v = float(diff.max() - diff.min())
    ne = _n_eff(a.size, b.size)
    lam = (math.sqrt(ne) + 0.155 + 0.24 / math.sqrt(ne)) * v
    return TestResult(v, kuiper_sf(lam), int(a.size + b.size))


def circular_mean(sample, period: float) -> float:
    """Mean direction of circular data, returned in [0, period)."""
    ang = 2.0 * np.pi * np.asarray(sample, dtype=float) / period
    m = math.atan2(np.mean(np.sin(ang)), np.mean(np.cos(ang)))
    return (m / (2.0 * np.pi) * period) % period


# ---------------------------------------------------------------------------
# Location fits and bootstrap

@dataclass
class LocationFit:
    loc: float
    ci: tuple[float, float]
    se: float
    n: int


def gumbel_location_mle(x, scale: float = 1.0) -> float:
    """Closed-form MLE of the location for a known scale.

    mu = -s log(mean(exp(-x/s))), evaluated stably.
    """
    x = np.asarray(x, dtype=float) / scale
    m = np.min(x)
    return float(scale * (m - math.log(np.mean(np.exp(-(x - m))))))


def bootstrap(stat: Callable[[np.ndarray], float], x, rng: np.random.Generator,
              n_boot: int = 500) -> np.ndarray:
    """Nonparametric bootstrap replicates of ``stat``."""
    x = np.asarray(x)
    out = np.empty(n_boot)
    for b in range(n_boot):
        out[b] = stat(x[rng.integers(0, x.size, x.size)])
    return out


def percentile_ci(boots, level: float = 0.95) -> tuple[float, float]:
    a = 0.5 * (1.0 - level)
    lo, hi = np.quantile(boots, [a, 1.0 - a])
    return float(lo), float(hi)


def gumbel_location_fit(sample, scale: float = 1.0, rng: np.random.Generator | None = None,
                        n_boot: int = 500, level: float = 0.95) -> LocationFit:
    """Location MLE of a Gumbel law with known scale, with a bootstrap CI."""
    x = np.asarray(sample, dtype=float).ravel()
    mu = gumbel_location_mle(x, scale)
    if x.size < 2:
        return LocationFit(mu, (mu, mu), 0.0, x.size)
    rng = rng if rng is not None else np.random.default_rng(0)
    boots = bootstrap(lambda y: gumbel_location_mle(y, scale), x, rng, n_boot)
    return LocationFit(mu, percentile_ci(boots, level), float(np.std(boots, ddof=1)), x.size)


def shift_location_fit(sample, law_at_zero: TheoreticalLaw, rng=None, n_boot=500,
                       level=0.95) -> LocationFit:
    """Location estimate for a known-shape law: sample mean minus law mean.

    Used for the half-Gumbel and Theta laws, whose means are known in
    closed form; bootstrap CI on the sample mean.
    """
    x = np.asarray(sample, dtype=float).ravel()
    m0 = law_mean(law_at_zero)
    rng = rng if rng is not None else np.random.default_rng(0)
    boots = bootstrap(np.mean, x, rng, n_boot) - m0
    return LocationFit(float(np.mean(x) - m0), percentile_ci(boots, level),
                       float(np.std(boots, ddof=1)), x.size)


def law_mean(law: TheoreticalLaw) -> float:
    """Mean of the location-type laws."""
    g = np.euler_gamma
    f, p = law.family, law.params
    loc = p.get("loc", 0.0)
    if f == "Gumbel":
        return loc + p["scale"] * g
    if f == "HalfGumbel":
        return loc + 0.5 * (g - math.log(2.0))
    if f == "ThetaLaw":
        # E[-log|N|] = (gamma + log 2)/2
        return loc + 0.5 * (g + math.log(2.0))
    if f == "Logistic":
        return loc
    if f == "Exponential":
        return 1.0 / p["rate"]
    raise ValueError(f"no closed-form mean for {f}")


def ks_parametric_bootstrap(sample, make_law: Callable[[float], TheoreticalLaw],
                            fit: Callable[[np.ndarray], float], rng: np.random.Generator,
                            n_boot: int = 500) -> TestResult:
    """KS test with an estimated location (Lilliefors-type null by simulation)."""
    x = np.asarray(sample, dtype=float)
    law = make_law(fit(x))
    d = ks_test(x, law).statistic
    null = np.empty(n_boot)
    for b in range(n_boot):
        y = law.sample(rng, x.size)
        null[b] = ks_test(y, make_law(fit(y))).statistic
    p = (1 + np.count_nonzero(null >= d)) / (n_boot + 1)
    return TestResult(d, float(p), x.size)


def binomial_within(k: int, n: int, p: float, n_sigma: float = 3.0) -> bool:
    """Whether k successes out of n are within n_sigma of the mean n p."""
    sd = math.sqrt(n * p * (1.0 - p))
    return abs(k - n * p) <= n_sigma * sd


def permutation_ks(a, b, rng: np.random.Generator, n_perm: int = 200) -> float:
    """Permutation p-value of the two-sample KS distance."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d0 = ks_2samp(a, b).statistic
    pool = np.concatenate([a, b])
    hits = 0
    for _ in range(n_perm):
        rng.shuffle(pool)
        if ks_2samp(pool[:a.size], pool[a.size:]).statistic >= d0:
            hits += 1
    return (hits + 1) / (n_perm + 1)


def is_monotone_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


# ---------------------------------------------------------------------------
# Reports

@dataclass
class CheckReport:
    """One pass/fail statement with its evidence."""

    name: str
    statistic: float
    threshold: float
    passed: bool
    n: int = 0
    seed: int | None = None
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def to_json(obj, **kw) -> str:
    return json.dumps(_jsonable(obj), **kw)
