"""
Simulation of the planar SDE, first passages, phase slips and batches.

All trajectory kernels are compiled with numba and take the compiled field
evaluator of a :class:`~phaseslip.model.SystemSpec` together with a
``numpy.random.Generator``. Every replicate owns its generator, derived from
the master seed by ``SeedSequence(master, spawn_key=(i,))``. The stream of
replicate i therefore does not depend on the batch size or on how the batch
is split across workers.

The module also holds exact samplers for the explosive Ornstein-Uhlenbeck
process dx = lambda x dt + sigma dW. They use x_t = exp(lambda t) xt_t, where
xt is a Brownian motion run at clock v(t) = sigma^2 (1 - exp(-2 lambda t)) /
(2 lambda).
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba as nb
import numpy as np
from scipy import special

from .model import OrbitConstants, OrbitGeometry, SystemSpec, compute_exponents

INF = math.inf
N_TABLE = 256


# ---------------------------------------------------------------------------
# configuration and RNG

def default_dt(constants: OrbitConstants, sigma: float) -> float:
    """min(1e-3, 0.01/lambda_+) * min(1, sigma)."""
    return min(1e-3, 0.01 / constants.lambda_plus) * min(1.0, max(sigma, 1e-12))


@dataclass(frozen=True)
class SimConfig:
    """Noise intensity, step and budget of a simulation."""

    sigma: float
    dt: float
    seed: int = 0
    max_time: float = 1e4
    tol: float = 1e-12

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not math.isfinite(self.max_time) or self.max_time <= 0:
            raise ValueError("max_time must be positive and finite")

    @classmethod
    def for_spec(cls, spec: SystemSpec, sigma: float, constants: OrbitConstants | None = None,
                 **kw) -> "SimConfig":
        constants = constants or compute_exponents(spec)
        cfg = cls(sigma=sigma, dt=kw.pop("dt", default_dt(constants, sigma)), **kw)
        cfg.check(constants)
        return cfg

    def check(self, constants: OrbitConstants) -> None:
        bound = min(0.01 / constants.lambda_plus, 0.01 * constants.T_plus)
        if self.dt > bound * (1 + 1e-12):
            raise ValueError(f"dt = {self.dt} exceeds min(0.01/lambda_+, 0.01 T_+) = {bound}")

    @property
    def n_max(self) -> int:
        return int(math.ceil(self.max_time / self.dt))

    def replace(self, **kw) -> "SimConfig":
        d = asdict(self)
        d.update(kw)
        return SimConfig(**d)


def replicate_rng(master_seed: int, index: int) -> np.random.Generator:
    """Generator of replicate ``index``.

    The seed is ``SeedSequence(master_seed, spawn_key=(index,))``, which
    hashes (master, index) through numpy's fixed mixing function; PCG64 is
    seeded from the resulting state.
    """
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))))


# ---------------------------------------------------------------------------
# records

@dataclass
class FirstPassageRecord:
    hit_phi: float
    hit_time: float
    which_boundary: str
    killed: bool
    hit_r: float = math.nan
    marker_phi: float = math.nan
    marker_time: float = math.nan
    reason: str = ""


@dataclass
class SlipRecord:
    phi_minus: float
    phi_zero: float
    phi_plus: float
    winding: int
    success: bool
    phi_origin: float = 0.0


@dataclass
class Failure:
    index: int
    message: str


@dataclass
class BatchResult:
    records: list
    failures: list[Failure]
    master_seed: int
    n_replicates: int

    @property
    def n_failures(self) -> int:
        return len(self.failures)


# ---------------------------------------------------------------------------
# boundaries

@dataclass(frozen=True)
class Boundary:
    """Curve r = c(phi) tabulated on a uniform grid of [0, 1).

    ``side`` is +1 for an upper boundary (hit when r >= c) and -1 for a
    lower one (hit when r <= c).
    """

    table: np.ndarray
    side: int
    label: str
    kind: str = "curve"

    @classmethod
    def flat(cls, level: float, side: int, label: str | None = None, n: int = 8) -> "Boundary":
        return cls(np.full(n, float(level)), side, label or f"r={level:g}", "flat")

    @classmethod
    def scaled(cls, c: float, geometry: OrbitGeometry, side: int, label: str | None = None,
               n: int = N_TABLE) -> "Boundary":
        """r = c sqrt(2 lambdaT h_per(phi))."""
        phi = np.arange(n) / n
        return cls(c * geometry.scale(phi), side, label or f"scaled({c:g})", "scaled")

    @classmethod
    def from_curve(cls, curve, side: int, label: str | None = None, n: int = N_TABLE,
                   shift: float = 0.0) -> "Boundary":
        phi = np.arange(n) / n
        return cls(np.asarray(curve(phi), dtype=float) + shift, side,
                   label or f"curve(s={getattr(curve, 's', '?')})", "curve")

    def __call__(self, phi):
        return _table_eval(self.table, np.asarray(phi, dtype=float))


def _table_eval(table, phi):
    n = table.size
    x = np.mod(phi, 1.0) * n
    i = np.floor(x).astype(int) % n
    w = x - np.floor(x)
    return table[i] * (1 - w) + table[(i + 1) % n] * w


@nb.njit(cache=True)
def _interp_periodic(table, phi):
    n = table.size
    x = (phi - math.floor(phi)) * n
    i = int(x)
    if i >= n:
        i = n - 1
    w = x - i
    j = i + 1
    if j == n:
        j = 0
    return table[i] * (1.0 - w) + table[j] * w


@nb.njit(cache=True)
def _hdrift(r, h_a, h_dx, h_q, sigma):
    # Doob drift sigma^2 / G(r) with G(r) = (r - a) / q(r)
    x = r - h_a
    if x <= 0.0:
        x = 1e-300
    k = x / h_dx
    n = h_q.size
    if k >= n - 1:
        q = h_q[n - 1]
    else:
        i = int(k)
        w = k - i
        q = h_q[i] * (1.0 - w) + h_q[i + 1] * w
    return sigma * sigma * q / x


# ---------------------------------------------------------------------------
# Euler-Maruyama

def step_em(state, spec: SystemSpec, config: SimConfig, rng: np.random.Generator):
    """One Euler-Maruyama step for arrays of states ``(r, phi)``.

    Raises
    ------
    FloatingPointError
        If the new state is not finite.
    """
    r = np.asarray(state[0], dtype=float)
    phi = np.asarray(state[1], dtype=float)
    k = spec.k
    xi = rng.standard_normal(r.shape + (k,))
    sq = config.sigma * math.sqrt(config.dt)
    rn = r + spec.f_r(r, phi) * config.dt + sq * np.sum(spec.g_r(r, phi) * xi, axis=-1)
    pn = phi + spec.f_phi(r, phi) * config.dt + sq * np.sum(spec.g_phi(r, phi) * xi, axis=-1)
    if not (np.all(np.isfinite(rn)) and np.all(np.isfinite(pn))):
        raise FloatingPointError("non-finite state in Euler-Maruyama step")
    return rn, pn


def _python_fields(spec: SystemSpec):
    """Scalar field evaluator with the compiled signature, for the py_func path."""
    def fields(r, phi, prm):
        gr = np.broadcast_to(spec.g_r(r, phi), (2,)) if spec.k == 2 else \
            np.append(np.ravel(spec.g_r(r, phi)), 0.0)
        gp = np.broadcast_to(spec.g_phi(r, phi), (2,)) if spec.k == 2 else \
            np.append(np.ravel(spec.g_phi(r, phi)), 0.0)
        return (float(spec.f_r(r, phi)), float(spec.f_phi(r, phi)),
                float(gr[0]), float(gr[1]), float(gp[0]), float(gp[1]))
    return fields


@nb.njit(cache=True)
def _path_kernel(fields, prm, r0, phi0, sigma, dt, n_steps, every, rng):
    m = n_steps // every + 1
    out = np.empty((m, 3))
    r = r0
    phi = phi0
    sq = sigma * math.sqrt(dt)
    out[0, 0] = 0.0
    out[0, 1] = r
    out[0, 2] = phi
    j = 1
    for k in range(1, n_steps + 1):
        fr, fp, a, b, c, d = fields(r, phi, prm)
        x1 = rng.standard_normal()
        x2 = rng.standard_normal()
        r = r + fr * dt + sq * (a * x1 + b * x2)
        phi = phi + fp * dt + sq * (c * x1 + d * x2)
        if k % every == 0:
            out[j, 0] = k * dt
            out[j, 1] = r
            out[j, 2] = phi
            j += 1
    return out[:j]


def simulate_path(spec: SystemSpec, config: SimConfig, start, n_steps: int,
                  rng: np.random.Generator | None = None, every: int = 1) -> np.ndarray:
    """Euler-Maruyama path, columns (t, r, phi), sampled every ``every`` steps."""
    rng = rng if rng is not None else replicate_rng(config.seed, 0)
    fields, prm = _fields_of(spec)
    kern = _path_kernel if spec.jit_fields is not None else _path_kernel.py_func
    return kern(fields, prm, float(start[0]), float(start[1]), float(config.sigma),
                float(config.dt), int(n_steps), int(every), rng)


def _fields_of(spec: SystemSpec):
    if spec.jit_fields is not None:
        return spec.jit_fields, np.asarray(spec.jit_params, dtype=float)
    return _python_fields(spec), np.zeros(1)


# ---------------------------------------------------------------------------
# first passage kernel

@nb.njit(cache=True)
def _fp_kernel(fields, prm, r0, phi0, sigma, dt, n_max, tables, sides, kill_lo, kill_hi,
               phi_stop, h_a, h_dx, h_q, reflect_lo, marker, marker_reset, rng):
    """Integrate until a boundary is crossed.

    Returns (status, index, t, r, phi, marker_t, marker_phi, steps) with
    status 1 = boundary ``index`` hit, 2 = phi reached phi_stop,
    0 = max steps, -1 = hard kill, -2 = non-finite state.
    """
    sq = sigma * math.sqrt(dt)
    r = r0
    phi = phi0
    t = 0.0
    nb_ = tables.shape[0]
    use_h = h_q.size > 0
    use_m = marker.size > 0
    m_t = math.nan
    m_phi = math.nan
    above = False
    if use_m:
        above = r > _interp_periodic(marker, phi)
    for k in range(n_max):
        fr, fp, a, b, c, d = fields(r, phi, prm)
        if use_h:
            fr += _hdrift(r, h_a, h_dx, h_q, sigma)
        x1 = rng.standard_normal()
        x2 = rng.standard_normal()
        rn = r + fr * dt + sq * (a * x1 + b * x2)
        pn = phi + fp * dt + sq * (c * x1 + d * x2)
        if rn < reflect_lo:
            rn = 2.0 * reflect_lo - rn
        if not (math.isfinite(rn) and math.isfinite(pn)):
            return -2, -1, t, r, phi, m_t, m_phi, k
        best_w = 2.0
        best_i = -1
        for i in range(nb_):
            s = sides[i]
            g0 = s * (r - _interp_periodic(tables[i], phi))
            g1 = s * (rn - _interp_periodic(tables[i], pn))
            if g1 >= 0.0:
                w = g0 / (g0 - g1) if g0 < 0.0 else 0.0
                if w < best_w:
                    best_w = w
                    best_i = i
        if pn >= phi_stop and pn != phi:
            w = (phi_stop - phi) / (pn - phi)
            if w < best_w:
                best_w = w
                best_i = nb_
        if use_m:
            if rn <= marker_reset:
                m_t = math.nan
                m_phi = math.nan
            m1 = rn - _interp_periodic(marker, pn)
            if (not above) and m1 > 0.0:
                m0 = r - _interp_periodic(marker, phi)
                w = m0 / (m0 - m1) if m0 < 0.0 else 0.0
                if best_i < 0 or w <= best_w:
                    m_t = t + w * dt
                    m_phi = phi + w * (pn - phi)
            above = m1 > 0.0
        if best_i >= 0:
            th = t + best_w * dt
            rh = r + best_w * (rn - r)
            ph = phi + best_w * (pn - phi)
            if best_i == nb_:
                return 2, -1, th, rh, ph, m_t, m_phi, k + 1
            return 1, best_i, th, rh, ph, m_t, m_phi, k + 1
        if rn <= kill_lo or rn >= kill_hi:
            return -1, -1, t + dt, rn, pn, m_t, m_phi, k + 1
        r = rn
        phi = pn
        t += dt
    return 0, -1, t, r, phi, m_t, m_phi, n_max


@dataclass
class HTransform:
    """Doob h-transform conditioning a 1-D gradient drift on hitting b before a.

    The added drift is sigma^2 / G(x), G(x) = int_a^x exp(2(U(y)-U(x))/sigma^2) dy,
    stored as q(x) = (x - a) / G(x) on a uniform grid of [a, b].
    """

    a: float
    b: float
    dx: float
    q: np.ndarray
    sigma: float

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        k = np.clip((x - self.a) / self.dx, 0, self.q.size - 1)
        q = np.interp(k, np.arange(self.q.size), self.q)
        return self.sigma ** 2 * q / np.maximum(x - self.a, 1e-300)


def committor_drift(potential: Callable, a: float, b: float, sigma: float,
                    n: int = 4000, order: int = 8) -> HTransform:
    """Tabulate the h-transform drift for dx = -U'(x) dt + sigma dW.

    G is accumulated cell by cell as G_{k+1} = e^{2(U_k - U_{k+1})/sigma^2} G_k
    + int_{x_k}^{x_{k+1}} e^{2(U(y) - U_{k+1})/sigma^2} dy, which never forms
    the large exponentials explicitly.
    """
    if not a < b:
        raise ValueError("need a < b")
    x = np.linspace(a, b, n + 1)
    dx = x[1] - x[0]
    xg, wg = np.polynomial.legendre.leggauss(order)
    c2 = 2.0 / sigma ** 2
    U = potential(x)
    G = np.zeros(n + 1)
    for k in range(n):
        y = x[k] + 0.5 * dx * (xg + 1.0)
        loc = 0.5 * dx * np.sum(wg * np.exp(c2 * (potential(y) - U[k + 1])))
        G[k + 1] = math.exp(c2 * (U[k] - U[k + 1])) * G[k] + loc
    q = np.empty(n + 1)
    q[0] = 1.0
    q[1:] = (x[1:] - a) / G[1:]
    return HTransform(float(a), float(b), float(dx), q, float(sigma))


_EMPTY = np.zeros(0)
_EMPTY_TABLES = np.zeros((0, 1))


@dataclass
class PassageProblem:
    """Prepared first-passage problem; ``run(rng)`` performs one replicate."""

    spec: SystemSpec
    config: SimConfig
    start: tuple
    boundaries: tuple
    phi_stop: float = INF
    htransform: HTransform | None = None
    reflect_lo: float = -INF
    marker: Boundary | None = None
    marker_reset: float = -INF
    kill_lo: float = -INF
    kill_hi: float = INF
    _args: tuple = field(init=False, repr=False)

    def __post_init__(self):
        r0, phi0 = float(self.start[0]), float(self.start[1])
        for bd in self.boundaries:
            if bd.side * (r0 - float(bd(phi0))) >= 0:
                raise ValueError(f"start {self.start} not strictly inside boundary {bd.label}")
        if not math.isfinite(self.kill_lo) and not math.isfinite(self.kill_hi):
            orbit = round(2.0 * r0) / 2.0
            self.kill_lo, self.kill_hi = orbit - 2.0, orbit + 2.0
        n = max([bd.table.size for bd in self.boundaries] + [1])
        tables = np.zeros((len(self.boundaries), n))
        for i, bd in enumerate(self.boundaries):
            tables[i] = bd.table if bd.table.size == n else _table_eval(bd.table, np.arange(n) / n)
        sides = np.array([float(bd.side) for bd in self.boundaries])
        fields, prm = _fields_of(self.spec)
        h = self.htransform
        self._args = (fields, prm, r0, phi0, float(self.config.sigma), float(self.config.dt),
                      int(self.config.n_max), tables, sides, float(self.kill_lo),
                      float(self.kill_hi), float(self.phi_stop),
                      h.a if h else 0.0, h.dx if h else 1.0, h.q if h else _EMPTY,
                      float(self.reflect_lo),
                      self.marker.table if self.marker is not None else _EMPTY,
                      float(self.marker_reset))
        self._kernel = _fp_kernel if self.spec.jit_fields is not None else _fp_kernel.py_func

    def raw(self, rng: np.random.Generator, start=None):
        args = self._args
        if start is not None:
            args = args[:2] + (float(start[0]), float(start[1])) + args[4:]
        return self._kernel(*args, rng)

    def run(self, rng: np.random.Generator, start=None) -> FirstPassageRecord:
        status, idx, t, r, phi, mt, mphi, _ = self.raw(rng, start)
        if status == 1:
            return FirstPassageRecord(phi, t, self.boundaries[idx].label, False, r, mphi, mt)
        if status == 2:
            return FirstPassageRecord(phi, t, "phi_stop", False, r, mphi, mt)
        if status == -2:
            raise FloatingPointError("non-finite state")
        reason = "max_time" if status == 0 else "domain"
        return FirstPassageRecord(math.nan, math.nan, "", True, r, mphi, mt, reason)


def first_passage(spec: SystemSpec, config: SimConfig, start, boundaries: Sequence[Boundary],
                  rng: np.random.Generator | None = None, **kw) -> FirstPassageRecord:
    """First crossing of any of ``boundaries`` from ``start = (r0, phi0)``.

    The crossing point is located by linear interpolation of the signed
    distance to the curve inside the step. Keyword arguments are passed to
    :class:`PassageProblem` (``phi_stop``, ``htransform``, ``reflect_lo``,
    ``marker``, ``marker_reset``, ``kill_lo``, ``kill_hi``).
    """
    rng = rng if rng is not None else replicate_rng(config.seed, 0)
    return PassageProblem(spec, config, tuple(start), tuple(boundaries), **kw).run(rng)


# ---------------------------------------------------------------------------
# batches

def _run_chunk(kernel, master_seed, indices):
    out = []
    for i in indices:
        try:
            out.append((i, kernel(i, replicate_rng(master_seed, i)), None))
        except Exception as exc:  # collected, not fatal
            out.append((i, None, f"{type(exc).__name__}: {exc}"))
    return out


def run_batch(kernel: Callable[[int, np.random.Generator], object], n_replicates: int,
              master_seed: int, parallelism: int = 1, chunk: int | None = None) -> BatchResult:
    """Run ``kernel(i, rng_i)`` for i < n_replicates.

    Results are ordered by replicate index whatever the parallelism. With
    ``parallelism > 1`` chunks of indices go to a process pool, so the
    kernel must be picklable (a module-level function or a partial of one).
    """
    n = int(n_replicates)
    if n < 0:
        raise ValueError("n_replicates must be nonnegative")
    idx = list(range(n))
    if parallelism <= 1 or n == 0:
        parts = [_run_chunk(kernel, master_seed, idx)]
    else:
        chunk = chunk or max(1, n // (4 * parallelism))
        groups = [idx[i:i + chunk] for i in range(0, n, chunk)]
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            parts = list(ex.map(_run_chunk, [kernel] * len(groups),
                                [master_seed] * len(groups), groups))
    records, failures = [], []
    for part in parts:
        for i, rec, err in part:
            if err is None:
                records.append(rec)
            else:
                failures.append(Failure(i, err))
    return BatchResult(records, failures, int(master_seed), n)


class _ProblemKernel:
    def __init__(self, problem: PassageProblem):
        self.problem = problem

    def __call__(self, i, rng):
        return self.problem.run(rng)


def passage_batch(problem: PassageProblem, n: int, master_seed: int,
                  parallelism: int = 1) -> BatchResult:
    return run_batch(_ProblemKernel(problem), n, master_seed, parallelism)


# ---------------------------------------------------------------------------
# exact samplers for the linear system dx = lambda x dt + sigma dW

def ou_clock(lam: float, sigma: float, t):
    """v(t) = sigma^2 (1 - e^{-2 lambda t}) / (2 lambda)."""
    return sigma ** 2 * -np.expm1(-2.0 * lam * np.asarray(t, dtype=float)) / (2.0 * lam)


def linear_ou_paths(lam: float, sigma: float, x0: float, t_grid, rng: np.random.Generator,
                    n_paths: int = 1) -> np.ndarray:
    """Exact samples of x on ``t_grid`` (shape (n_paths, len(t_grid)))."""
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) < 0) or t[0] < 0:
        raise ValueError("t_grid must be nonnegative and increasing")
    v = ou_clock(lam, sigma, t)
    dv = np.diff(np.concatenate([[0.0], v]))
    w = np.cumsum(rng.standard_normal((n_paths, t.size)) * np.sqrt(dv), axis=1)
    return np.exp(lam * t) * (x0 + w)


def reflection_hit_probability(lam: float, sigma: float, x0: float) -> float:
    """P(tau_0 < infinity) = 2 Phi_bar(|x0| sqrt(2 lambda) / sigma)."""
    return float(special.erfc(abs(x0) * math.sqrt(lam) / sigma))


@nb.njit(cache=True)
def _ou_exit_kernel(lam, sigma, x0, a, b, dt_coarse, dt_fine, t_max, rng):
    """Exit of x from (a, b) for the exact OU sampler with bridge correction.

    Works in the clock w = (1 - e^{-2 lambda t}) / (2 lambda) with the
    standard Brownian motion B, x = e^{lambda t}(x0 + sigma B_w). The
    boundaries are linearly interpolated in w over each step.
    Returns (which, t): which = +1 (b), -1 (a), 0 (t_max).
    """
    t = 0.0
    B = 0.0
    while t < t_max:
        e0 = math.exp(-lam * t)
        x = (x0 + sigma * B) / e0
        step_sd = sigma * math.sqrt(dt_coarse)
        dist = min(b - x, x - a)
        if dist < 6.0 * step_sd + 2.0 * abs(lam * x) * dt_coarse:
            dt = dt_fine
        else:
            dt = dt_coarse
        t1 = t + dt
        e1 = math.exp(-lam * t1)
        dw = (e0 * e0 - e1 * e1) / (2.0 * lam)
        B1 = B + math.sqrt(dw) * rng.standard_normal()
        # distances inside, in B units
        u0 = (b * e0 - x0) / sigma - B
        u1 = (b * e1 - x0) / sigma - B1
        l0 = B - (a * e0 - x0) / sigma
        l1 = B1 - (a * e1 - x0) / sigma
        if u1 <= 0.0:
            w = u0 / (u0 - u1)
            return 1, t + w * dt
        if l1 <= 0.0:
            w = l0 / (l0 - l1)
            return -1, t + w * dt
        pu = math.exp(-2.0 * u0 * u1 / dw) if math.isfinite(b) else 0.0
        pl = math.exp(-2.0 * l0 * l1 / dw) if math.isfinite(a) else 0.0
        if pu > 0.0 or pl > 0.0:
            v = rng.random()
            if v < pu:
                return 1, t + 0.5 * dt
            if v < pu + pl * (1.0 - pu):
                return -1, t + 0.5 * dt
        t = t1
        B = B1
    return 0, t


def linear_ou_exit(lam: float, sigma: float, x0: float, a: float = -INF, b: float = INF,
                   rng: np.random.Generator | None = None, dt_coarse: float = 0.02,
                   dt_fine: float = 1e-3, t_max: float | None = None) -> FirstPassageRecord:
    """First exit of the linear process from (a, b), sampled without discretization bias.

    Gaussian increments of the time-changed Brownian motion are exact; a
    crossing between grid points is detected with the Brownian-bridge
    probability for a linear boundary. The step is ``dt_fine`` whenever the
    process is within a few coarse-step standard deviations of a boundary.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not a < x0 < b:
        raise ValueError("need a < x0 < b")
    rng = rng if rng is not None else np.random.default_rng(0)
    t_max = 40.0 / lam if t_max is None else t_max
    if sigma == 0.0:
        # deterministic x0 e^{lambda t}
        if x0 == 0.0:
            return FirstPassageRecord(math.nan, math.nan, "", True, reason="max_time")
        lvl = b if x0 > 0 else a
        if not math.isfinite(lvl):
            return FirstPassageRecord(math.nan, math.nan, "", True, reason="max_time")
        t = math.log(lvl / x0) / lam
        return FirstPassageRecord(math.nan, t, "b" if x0 > 0 else "a", False, lvl)
    which, t = _ou_exit_kernel(float(lam), float(sigma), float(x0), float(a), float(b),
                               float(dt_coarse), float(dt_fine), float(t_max), rng)
    if which == 0:
        return FirstPassageRecord(math.nan, math.nan, "", True, reason="max_time")
    return FirstPassageRecord(math.nan, float(t), "b" if which > 0 else "a", False,
                              b if which > 0 else a)


def linear_hit_zero_cdf(t, lam: float, sigma: float, x0: float):
    """Exact P(tau_0 <= t | tau_0 < infinity) for a start x0 != 0."""
    z = abs(x0) * math.sqrt(2.0 * lam) / sigma
    t = np.asarray(t, dtype=float)
    y = z / np.sqrt(-np.expm1(-2.0 * lam * np.maximum(t, 1e-300)))
    return np.exp(special.log_ndtr(-y) - special.log_ndtr(-z))


@nb.njit(cache=True)
def _bes3_bridge_crosses(rho0, V, lam, sigma, a_abs, n, rng):
    # norm of a 3-d Brownian bridge from (rho0, 0, 0) to 0 over clock V,
    # checked against the moving level a_abs * sqrt(1 - 2 lambda u / sigma^2)
    du = V / n
    w1 = np.zeros(n + 1)
    w2 = np.zeros(n + 1)
    w3 = np.zeros(n + 1)
    s = math.sqrt(du)
    for k in range(1, n + 1):
        w1[k] = w1[k - 1] + s * rng.standard_normal()
        w2[k] = w2[k - 1] + s * rng.standard_normal()
        w3[k] = w3[k - 1] + s * rng.standard_normal()
    prev_g = 0.0
    for k in range(n + 1):
        f = k / n
        x = rho0 * (1.0 - f) + w1[k] - f * w1[n]
        y = w2[k] - f * w2[n]
        z = w3[k] - f * w3[n]
        rho = math.sqrt(x * x + y * y + z * z)
        arg = 1.0 - 2.0 * lam * k * du / (sigma * sigma)
        lvl = a_abs * math.sqrt(arg if arg > 0.0 else 0.0)
        g = lvl - rho
        if g <= 0.0:
            return True
        if k > 0 and rng.random() < math.exp(-2.0 * prev_g * g / du):
            return True
        prev_g = g
    return False


def linear_hit_zero_conditional(lam: float, sigma: float, x0: float, a: float,
                                rng: np.random.Generator, n_bridge: int = 256,
                                max_tries: int = 10_000) -> tuple[float, int]:
    """Exact draw of tau_0 conditioned on tau_0 < tau_a, for a < x0 < 0.

    tau_0 given tau_0 < infinity is drawn by inverting its closed-form CDF
    (computed in log space, so any sigma works). Given tau_0, the distance
    of the time-changed Brownian motion to 0 is a 3-d Bessel bridge, which
    is simulated and rejected if it reaches the moving image of a.

    Returns (tau_0, number of rejected draws).
    """
    if not a < x0 < 0:
        raise ValueError("need a < x0 < 0")
    z = abs(x0) * math.sqrt(2.0 * lam) / sigma
    logz = special.log_ndtr(-z)
    for tries in range(max_tries):
        u = rng.random()
        y = -special.ndtri_exp(math.log(u) + logz)
        tau = -math.log1p(-(z / y) ** 2) / (2.0 * lam)
        if not math.isfinite(a):
            return tau, tries
        V = float(ou_clock(lam, sigma, tau))
        if not _bes3_bridge_crosses(abs(x0), V, lam, sigma, abs(a), n_bridge, rng):
            return tau, tries
    raise RuntimeError("conditioning starvation in the hit-zero sampler")


# ---------------------------------------------------------------------------
# phase slips

@nb.njit(cache=True)
def _slip_kernel(fields, prm, r0, phi0, sigma, dt, n_max, g_minus, g_plus, n_slips, rng):
    """Long run from the stable orbit r=-1/2 recording phase slips through r=0.

    A slip starts with the last upward crossing of Gamma_- before tau_0 with
    no return to r=-1/2 in between, passes r=0 and succeeds at the first
    crossing of Gamma_+ unless Gamma_- is crossed downward first. After a
    success r is shifted by -1. A crossing of r=-1 (reverse slip) shifts r
    by +1 and is counted separately; crossing r=0 upward again before
    re-entering through Gamma_- undoes it, so the count is net.

    Returns (records (n, 6): phi_minus, phi_zero, phi_plus, winding, success,
    phi_origin), counters (attempts, crossings, failures, reversals, steps).
    """
    sq = sigma * math.sqrt(dt)
    rec = np.empty((n_slips, 6))
    n_rec = 0
    attempts = 0
    crossings = 0
    failures = 0
    reversals = 0
    r = r0
    phi = phi0
    armed = True
    phase_b = False
    phi_minus = math.nan
    phi_zero = math.nan
    origin = phi0
    k = 0
    while k < n_max and n_rec < n_slips:
        k += 1
        fr, fp, a, b, c, d = fields(r, phi, prm)
        x1 = rng.standard_normal()
        x2 = rng.standard_normal()
        rn = r + fr * dt + sq * (a * x1 + b * x2)
        pn = phi + fp * dt + sq * (c * x1 + d * x2)
        gm0 = r - _interp_periodic(g_minus, phi)
        gm1 = rn - _interp_periodic(g_minus, pn)
        if not phase_b:
            if rn <= -0.5:
                armed = True
                phi_minus = math.nan
            elif gm0 < 0.0 and gm1 >= 0.0:
                w = gm0 / (gm0 - gm1)
                phi_minus = phi + w * (pn - phi)
                if armed:
                    attempts += 1
                    armed = False
            if r < 0.0 and rn >= 0.0:
                if math.isnan(phi_minus):
                    # back up through r=0 right after a reversal: undo it
                    reversals -= 1
                    rn -= 1.0
                else:
                    w = r / (r - rn)
                    phi_zero = phi + w * (pn - phi)
                    crossings += 1
                    phase_b = True
            elif rn <= -1.0:
                reversals += 1
                rn += 1.0
                armed = False
                phi_minus = math.nan
        else:
            gp0 = r - _interp_periodic(g_plus, phi)
            gp1 = rn - _interp_periodic(g_plus, pn)
            if gp1 >= 0.0:
                w = gp0 / (gp0 - gp1) if gp0 < 0.0 else 0.0
                phi_plus = phi + w * (pn - phi)
                rec[n_rec, 0] = phi_minus
                rec[n_rec, 1] = phi_zero
                rec[n_rec, 2] = phi_plus
                rec[n_rec, 3] = math.floor(phi_zero - origin + 0.5)
                rec[n_rec, 4] = 1.0
                rec[n_rec, 5] = origin
                n_rec += 1
                origin = phi_plus
                phase_b = False
                armed = False
                phi_minus = math.nan
                rn -= 1.0
            elif gm1 <= 0.0:
                failures += 1
                phase_b = False
                armed = False
        r = rn
        phi = pn
    counters = np.array([attempts, crossings, failures, reversals, k], dtype=np.int64)
    return rec[:n_rec], counters


@dataclass
class SlipHarvest:
    records: list[SlipRecord]
    attempts: int
    crossings: int
    failures: int
    reversals: int
    steps: int
    complete: bool

    @property
    def success_fraction(self) -> float:
        return len(self.records) / max(self.crossings, 1)


def detect_slips(spec: SystemSpec, config: SimConfig, geometry: OrbitGeometry | None,
                 gamma_s_minus, gamma_s_plus, n_slips: int,
                 rng: np.random.Generator | None = None, phi0: float = 0.0,
                 n_table: int = N_TABLE) -> SlipHarvest:
    """Harvest ``n_slips`` successful phase slips from one long run.

    The curves are callables phi -> r (e.g. :class:`~phaseslip.ldp.GammaCurve`).
    If ``config.max_time`` runs out first the harvest is partial
    (``complete`` is False). ``geometry`` is accepted for symmetry with the
    experiment drivers, which convert phases with theta.
    """
    del geometry
    rng = rng if rng is not None else replicate_rng(config.seed, 0)
    grid = np.arange(n_table) / n_table
    gm = np.asarray(gamma_s_minus(grid), dtype=float)
    gp = np.asarray(gamma_s_plus(grid), dtype=float)
    if not (np.all(gm > -0.5) and np.all(gm < 0) and np.all(gp > 0) and np.all(gp < 0.5)):
        raise ValueError("Gamma curves must lie in (-1/2, 0) and (0, 1/2)")
    fields, prm = _fields_of(spec)
    kern = _slip_kernel if spec.jit_fields is not None else _slip_kernel.py_func
    rec, cnt = kern(fields, prm, -0.5, float(phi0), float(config.sigma), float(config.dt),
                    int(config.n_max), gm, gp, int(n_slips), rng)
    records = [SlipRecord(float(x[0]), float(x[1]), float(x[2]), int(x[3]), bool(x[4]),
                          float(x[5])) for x in rec]
    return SlipHarvest(records, int(cnt[0]), int(cnt[1]), int(cnt[2]), int(cnt[3]),
                       int(cnt[4]), len(records) == n_slips)


def winding_number(phi_hat):
    """Y = floor(phi_hat + 1/2)."""
    return np.floor(np.asarray(phi_hat, dtype=float) + 0.5).astype(int)


# ---------------------------------------------------------------------------
# export

def _rows(records):
    for r in records:
        yield asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r)


def export_records_csv(records, path, master_seed: int, columns: Sequence[str] | None = None,
                       meta: dict | None = None) -> Path:
    """One row per record; the first line is a comment echoing the seed."""
    path = Path(path)
    rows = list(_rows(records))
    columns = list(columns or (rows[0].keys() if rows else []))
    header = {"master_seed": int(master_seed), **(meta or {})}
    with path.open("w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        wr = csv.writer(fh)
        wr.writerow(columns)
        for row in rows:
            wr.writerow([repr(float(row[c])) if isinstance(row[c], (float, np.floating))
                         else row[c] for c in columns])
    return path


def export_records_jsonl(records, path, master_seed: int, meta: dict | None = None) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps({"master_seed": int(master_seed), **(meta or {})}) + "\n")
        for row in _rows(records):
            fh.write(json.dumps({k: (float(v) if isinstance(v, np.floating) else v)
                                 for k, v in row.items()}) + "\n")
    return path


def read_records_csv(path) -> tuple[dict, list[dict]]:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        header = json.loads(first[1:]) if first.startswith("#") else {}
        rows = list(csv.DictReader(fh))
    return header, rows
