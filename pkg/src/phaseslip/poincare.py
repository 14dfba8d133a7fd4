"""
Random Poincare map on the section phi = 0 (mod 1).

The radial coordinate r in (-1, 0) is recorded each time phi advances by one
period. Paths reaching the unstable orbits r = 0 or r = -1 are killed, so
the chain is substochastic. Its principal eigenvalue lambda_0 is the
per-period survival probability in the quasistationary regime. The
quasistationary distribution pi_0 is the profile of the survivors.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from . import stats
from .dynamics import (SimConfig, _fields_of, _fp_kernel, replicate_rng, PassageProblem,
                       Boundary)
from .model import OrbitConstants, SystemSpec, compute_exponents


@dataclass
class KernelEstimate:
    """Monte Carlo estimate of the one-period transition kernel.

    ``hits[i, j]`` counts starts in cell i landing in cell j, ``killed[i]``
    the starts in cell i that reached r = 0 or r = -1 within the period.
    """

    edges: np.ndarray
    hits: np.ndarray
    killed: np.ndarray
    sigma: float
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.edges.size - 1

    @property
    def counts(self) -> np.ndarray:
        return self.hits.sum(axis=1) + self.killed

    @property
    def matrix(self) -> np.ndarray:
        return self.hits / self.counts[:, None]

    @property
    def kill(self) -> np.ndarray:
        return self.killed / self.counts

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def resample(self, rng: np.random.Generator) -> "KernelEstimate":
        """Bootstrap replicate: each row redrawn from its multinomial."""
        hits = np.empty_like(self.hits)
        killed = np.empty_like(self.killed)
        for i in range(self.m):
            n = int(self.counts[i])
            p = np.append(self.hits[i], self.killed[i]) / n
            draw = rng.multinomial(n, p)
            hits[i] = draw[:-1]
            killed[i] = draw[-1]
        return KernelEstimate(self.edges, hits, killed, self.sigma, self.seed, self.meta)

    def flagged(self, threshold: float = 0.999) -> bool:
        return bool(np.any(self.kill > threshold))


@nb.njit(cache=True)
def _kernel_row(fields, prm, r0, sigma, dt, n_max, tables, sides, m, n_rep, rng):
    hits = np.zeros(m, dtype=np.int64)
    killed = 0
    empty = np.zeros(0)
    for _ in range(n_rep):
        status, idx, t, r, phi, mt, mp, k = _fp_kernel(
            fields, prm, r0, 0.0, sigma, dt, n_max, tables, sides, -2.0, 1.0, 1.0,
            0.0, 1.0, empty, -math.inf, empty, -math.inf, rng)
        if status == 2:
            j = int(math.floor((r + 1.0) * m))
            if j < 0:
                j = 0
            elif j >= m:
                j = m - 1
            hits[j] += 1
        else:
            killed += 1
    return hits, killed


def estimate_kernel(spec: SystemSpec, sigma: float, m: int = 64, n_per_cell: int = 1000,
                    seed: int = 0, constants: OrbitConstants | None = None,
                    dt: float | None = None) -> KernelEstimate:
    """Estimate the kernel from the cell midpoints (r = x_i, phi = 0).

    Each start runs until phi = 1 (landing r binned) or until r reaches 0
    or -1 (killed). Cell i uses the generator of replicate i of ``seed``, so
    rows do not depend on evaluation order.
    """
    if n_per_cell < 1000:
        raise ValueError("n_per_cell must be at least 1000")
    constants = constants or compute_exponents(spec)
    cfg = SimConfig.for_spec(spec, sigma, constants, max_time=10.0 * constants.T_minus,
                             **({"dt": dt} if dt else {}))
    edges = np.linspace(-1.0, 0.0, m + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    tables = np.array([[0.0], [-1.0]])
    sides = np.array([1.0, -1.0])
    fields, prm = _fields_of(spec)
    row = _kernel_row if spec.jit_fields is not None else _kernel_row.py_func
    hits = np.zeros((m, m), dtype=np.int64)
    killed = np.zeros(m, dtype=np.int64)
    for i, x in enumerate(mids):
        h, k = row(fields, prm, float(x), float(sigma), float(cfg.dt), int(cfg.n_max),
                   tables, sides, m, int(n_per_cell), replicate_rng(seed, i))
        hits[i] = h
        killed[i] = k
    est = KernelEstimate(edges, hits, killed, float(sigma), int(seed),
                         {"n_per_cell": int(n_per_cell), "dt": cfg.dt, "m": m})
    if est.flagged():
        warnings.warn("kill rate above 0.999 in some row: sigma too large for this grid")
        est.meta["flag"] = "excessive kill rate"
    return est


@dataclass
class SpectralEstimate:
    lambda0: float
    pi0: np.ndarray
    h0: np.ndarray
    iterations: int
    residual: float
    converged: bool
    ci: tuple = (math.nan, math.nan)
    se: float = math.nan

    def summary(self) -> dict:
        return {"lambda0": self.lambda0, "residual": self.residual, "iterations": self.iterations,
                "converged": self.converged, "ci": list(self.ci), "se": self.se}


def _power(M: np.ndarray, v: np.ndarray, left: bool, tol: float, max_iter: int):
    lam = 0.0
    res = math.inf
    for it in range(1, max_iter + 1):
        w = v @ M if left else M @ v
        lam = float(w.sum())
        if lam <= 0:
            return 0.0, w, it, 0.0
        w = w / lam
        res = float(np.abs(w - v).sum())
        v = w
        if res < tol:
            return lam, v, it, res
    return lam, v, max_iter, res


def principal_eigen(estimate, tol: float = 1e-10, max_iter: int = 100_000,
                    rng: np.random.Generator | None = None) -> SpectralEstimate:
    """Dominant eigenvalue and eigenvectors by power iteration.

    ``estimate`` is a :class:`KernelEstimate` or a nonnegative square
    matrix. pi_0 (left eigenvector, a probability vector) and h_0 (right
    eigenvector, normalized to sum to 1) are both iterated; the reported
    residual is ||pi K - lambda pi||_1. A random start is used when ``rng``
    is given.
    """
    M = estimate.matrix if isinstance(estimate, KernelEstimate) else np.asarray(estimate, float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("kernel must be square")
    if np.any(M < 0):
        raise ValueError("kernel must be nonnegative")
    n = M.shape[0]
    v0 = rng.random(n) if rng is not None else np.ones(n)
    v0 = v0 / v0.sum()
    lam, pi, it, _ = _power(M, v0, True, tol, max_iter)
    _, h, it2, _ = _power(M, v0.copy(), False, tol, max_iter)
    res = float(np.abs(pi @ M - lam * pi).sum())
    converged = it < max_iter and it2 < max_iter
    if not converged:
        warnings.warn("power iteration did not converge: small spectral gap")
    return SpectralEstimate(lam, pi, h, max(it, it2), res, converged)


def bootstrap_lambda(estimate: KernelEstimate, n_boot: int = 200, seed: int = 0,
                     level: float = 0.95) -> SpectralEstimate:
    """Principal eigen-data with a bootstrap CI for lambda_0."""
    base = principal_eigen(estimate)
    rng = np.random.default_rng(seed)
    vals = np.array([principal_eigen(estimate.resample(rng), tol=1e-12).lambda0
                     for _ in range(n_boot)])
    base.ci = stats.percentile_ci(vals, level)
    base.se = float(np.std(vals, ddof=1))
    return base


def entry_standard_errors(estimate: KernelEstimate, n_boot: int = 200, seed: int = 0):
    rng = np.random.default_rng(seed)
    reps = np.array([estimate.resample(rng).matrix for _ in range(n_boot)])
    return reps.std(axis=0, ddof=1)


# ---------------------------------------------------------------------------
# survival statistics from direct simulation

def harvest_crossings(spec: SystemSpec, sigma: float, n: int, seed: int,
                      constants: OrbitConstants | None = None, start=(-0.5, 0.0),
                      max_time: float = 1e5, dt: float | None = None):
    """First-passage phases to r = 0 or r = -1 from ``start``.

    Returns (phases, boundary labels, number killed by max_time).
    """
    constants = constants or compute_exponents(spec)
    cfg = SimConfig.for_spec(spec, sigma, constants, max_time=max_time,
                             **({"dt": dt} if dt else {}))
    prob = PassageProblem(spec, cfg, tuple(start),
                          (Boundary.flat(0.0, 1, "r=0"), Boundary.flat(-1.0, -1, "r=-1")))
    ph, lab, lost = [], [], 0
    for i in range(n):
        rec = prob.run(replicate_rng(seed, i))
        if rec.killed:
            lost += 1
        else:
            ph.append(rec.hit_phi)
            lab.append(rec.which_boundary)
    return np.array(ph), np.array(lab), lost


def survival_ratio(periods: np.ndarray, n_min: int, min_at_risk: int = 50):
    """Pooled P(N > n+1)/P(N > n) over n >= n_min (events / exposures).

    Returns (ratio, events, exposures).
    """
    N = np.asarray(periods, dtype=int)
    n_max = n_min
    while np.sum(N > n_max) >= min_at_risk:
        n_max += 1
    events = int(np.sum((N > n_min) & (N <= n_max + 1)))
    exposure = int(np.sum(np.clip(N, n_min, n_max + 1) - n_min))
    if exposure == 0:
        return math.nan, events, exposure
    return 1.0 - events / exposure, events, exposure


def survival_consistency(spec: SystemSpec, sigma: float, n_replicates: int, seed: int,
                         spectral: SpectralEstimate, n_min: int = 3, n_boot: int = 500,
                         constants: OrbitConstants | None = None, max_time: float = 1e5,
                         phases=None) -> stats.CheckReport:
    """Compare the direct per-period survival ratio with the kernel lambda_0.

    Also reports the total-variation distance between the normalized
    within-period phase histograms of consecutive periods n >= 3.
    """
    if phases is None:
        phases, _, lost = harvest_crossings(spec, sigma, n_replicates, seed, constants,
                                            max_time=max_time)
    else:
        lost = 0
    N = np.floor(phases).astype(int)
    ratio, events, exposure = survival_ratio(N, n_min)
    rng = np.random.default_rng(seed + 1)
    boots = []
    for _ in range(n_boot):
        boots.append(survival_ratio(rng.choice(N, N.size), n_min)[0])
    boots = np.array(boots)
    boots = boots[np.isfinite(boots)]
    se_r = float(np.std(boots, ddof=1)) if boots.size > 1 else math.nan
    se_k = spectral.se if math.isfinite(spectral.se) else 0.0
    se = math.sqrt(se_r ** 2 + se_k ** 2)
    diff = ratio - spectral.lambda0
    ok = bool(abs(diff) <= 1.96 * se)
    frac = phases - N
    tv = []
    for n in range(3, int(N.max()) if N.size else 3):
        a = frac[N == n]
        b = frac[N == n + 1]
        if min(a.size, b.size) < 200:
            break
        ha = np.histogram(a, bins=10, range=(0, 1))[0] / a.size
        hb = np.histogram(b, bins=10, range=(0, 1))[0] / b.size
        tv.append(0.5 * float(np.abs(ha - hb).sum()))
    return stats.CheckReport(
        name="survival_consistency", passed=ok, statistic=float(diff), threshold=1.96 * se,
        n=int(phases.size), seed=int(seed),
        detail={"ratio": ratio, "ratio_se": se_r, "lambda0": spectral.lambda0,
                 "lambda0_se": spectral.se, "events": events, "exposure": exposure,
                 "lost_to_max_time": lost, "profile_tv": tv, "sigma": sigma})


def quasistationary_check(spec: SystemSpec, sigma: float, estimate: KernelEstimate,
                          spectral: SpectralEstimate, n_period: int = 5, n: int = 20000,
                          seed: int = 0, constants: OrbitConstants | None = None):
    """TV distance between pi_0 and the survivors' law of r at phi = n_period.

    Returns (tv, number of survivors).
    """
    constants = constants or compute_exponents(spec)
    cfg = SimConfig.for_spec(spec, sigma, constants, max_time=2.0 * n_period * constants.T_minus)
    prob = PassageProblem(spec, cfg, (-0.5, 0.0),
                          (Boundary.flat(0.0, 1, "r=0"), Boundary.flat(-1.0, -1, "r=-1")),
                          phi_stop=float(n_period))
    r = []
    for i in range(n):
        rec = prob.run(replicate_rng(seed, i))
        if rec.which_boundary == "phi_stop":
            r.append(rec.hit_r)
    r = np.array(r)
    h = np.histogram(r, bins=estimate.edges)[0] / max(r.size, 1)
    return 0.5 * float(np.abs(h - spectral.pi0).sum()), int(r.size)


# ---------------------------------------------------------------------------
# export

def export_kernel(estimate: KernelEstimate, spectral: SpectralEstimate | None, directory) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savetxt(d / "kernel.csv", np.column_stack([estimate.midpoints, estimate.matrix,
                                                  estimate.kill]),
               delimiter=",", comments="",
               header="r_mid," + ",".join(f"c{j}" for j in range(estimate.m)) + ",kill")
    out = {"kernel": str(d / "kernel.csv")}
    if spectral is not None:
        np.savetxt(d / "pi0.csv", np.column_stack([estimate.midpoints, spectral.pi0, spectral.h0]),
                   delimiter=",", header="r_mid,pi0,h0", comments="")
        (d / "spectral.json").write_text(json.dumps(
            {**spectral.summary(), "sigma": estimate.sigma, "seed": estimate.seed,
             **estimate.meta}, indent=2))
        out["spectral"] = str(d / "spectral.json")
    return out
