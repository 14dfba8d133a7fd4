"""
Large-deviation computations for planar periodic systems.

The Freidlin-Wentzell Hamiltonian H(x, p) = p.D(x)p/2 + f(x).p generates
the optimal fluctuation paths. The instanton is the zero-energy connection
between the unstable manifold of the stable orbit r = -1/2 and the stable
manifold of the unstable orbit r = 0. It is found by shooting: each
manifold is grown from its linear fiber, both are carried to a common
section r = r_sec, and the one-parameter miss function along the section is
driven to zero.

The module also builds the curves Gamma^s_+ (deterministic flow away from
the unstable orbit) and Gamma^s_- (optimal fluctuation flow towards it)
that delimit a phase slip.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np
from scipy import integrate, interpolate, optimize

from .model import OrbitConstants, OrbitGeometry, SystemSpec, compute_exponents

DT_THETA = 1e-3      # RK4 step in theta-time
DELTA_INIT = 1e-4    # start distance on the unstable fiber
DELTA_END = 1e-6     # start distance on the stable fiber (backward leg)
R_SECTION = -0.25
FD_H = 1e-6


class NonTransversalError(RuntimeError):
    """The miss function has no sign change on the section."""


# ---------------------------------------------------------------------------
# Hamiltonian, numpy version

def hamiltonian(x, p, spec: SystemSpec):
    """H(x, p) = p.D(x)p / 2 + f(x).p for x = (r, phi), p = (p_r, p_phi)."""
    r, phi = np.asarray(x[0], dtype=float), np.asarray(x[1], dtype=float)
    pr, pp = np.asarray(p[0], dtype=float), np.asarray(p[1], dtype=float)
    D = spec.diffusion(r, phi)
    quad = D[..., 0, 0] * pr ** 2 + 2 * D[..., 0, 1] * pr * pp + D[..., 1, 1] * pp ** 2
    return 0.5 * quad + spec.f_r(r, phi) * pr + spec.f_phi(r, phi) * pp


def ham_vector_field(x, p, spec: SystemSpec, h: float = FD_H) -> np.ndarray:
    """(dr, dphi, dp_r, dp_phi)/dt of the Hamiltonian flow.

    Position derivatives of H are taken by central differences unless the
    spec provides d f_r/dr and the diffusion is constant.
    """
    r, phi = float(x[0]), float(x[1])
    pr, pp = float(p[0]), float(p[1])
    D = spec.diffusion(r, phi)
    dr = D[0, 0] * pr + D[0, 1] * pp + float(spec.f_r(r, phi))
    dphi = D[1, 0] * pr + D[1, 1] * pp + float(spec.f_phi(r, phi))
    Hx = lambda rr, ff: float(hamiltonian((rr, ff), (pr, pp), spec))
    dHr = (Hx(r + h, phi) - Hx(r - h, phi)) / (2 * h)
    dHp = (Hx(r, phi + h) - Hx(r, phi - h)) / (2 * h)
    return np.array([dr, dphi, -dHr, -dHp])


# ---------------------------------------------------------------------------
# compiled flow

@nb.njit(cache=True)
def _fd(fields, prm, r, phi):
    fr, fp, a, b, c, d = fields(r, phi, prm)
    drr = a * a + b * b
    drp = a * c + b * d
    dpp = c * c + d * d
    return fr, fp, drr, drp, dpp


@nb.njit(cache=True)
def _rhs(fields, prm, y, with_p):
    r, phi, pr, pp = y[0], y[1], y[2], y[3]
    fr, fp, drr, drp, dpp = _fd(fields, prm, r, phi)
    out = np.empty(4)
    if not with_p:
        out[0] = fr
        out[1] = fp
        out[2] = 0.0
        out[3] = 0.0
        return out
    out[0] = drr * pr + drp * pp + fr
    out[1] = drp * pr + dpp * pp + fp
    h = 1e-6
    a1 = _fd(fields, prm, r + h, phi)
    a0 = _fd(fields, prm, r - h, phi)
    b1 = _fd(fields, prm, r, phi + h)
    b0 = _fd(fields, prm, r, phi - h)
    hr1 = 0.5 * (a1[2] * pr * pr + 2 * a1[3] * pr * pp + a1[4] * pp * pp) + a1[0] * pr + a1[1] * pp
    hr0 = 0.5 * (a0[2] * pr * pr + 2 * a0[3] * pr * pp + a0[4] * pp * pp) + a0[0] * pr + a0[1] * pp
    hp1 = 0.5 * (b1[2] * pr * pr + 2 * b1[3] * pr * pp + b1[4] * pp * pp) + b1[0] * pr + b1[1] * pp
    hp0 = 0.5 * (b0[2] * pr * pr + 2 * b0[3] * pr * pp + b0[4] * pp * pp) + b0[0] * pr + b0[1] * pp
    out[2] = -(hr1 - hr0) / (2 * h)
    out[3] = -(hp1 - hp0) / (2 * h)
    return out


@nb.njit(cache=True)
def _ham(fields, prm, y):
    fr, fp, drr, drp, dpp = _fd(fields, prm, y[0], y[1])
    pr, pp = y[2], y[3]
    return 0.5 * (drr * pr * pr + 2 * drp * pr * pp + dpp * pp * pp) + fr * pr + fp * pp


@nb.njit(cache=True)
def _rk4(fields, prm, y, dt, with_p):
    k1 = _rhs(fields, prm, y, with_p)
    k2 = _rhs(fields, prm, y + 0.5 * dt * k1, with_p)
    k3 = _rhs(fields, prm, y + 0.5 * dt * k2, with_p)
    k4 = _rhs(fields, prm, y + dt * k3, with_p)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@nb.njit(cache=True)
def _integrate(fields, prm, y0, dt, n_max, with_p, r_stop, phi_stop, record):
    """RK4 with fixed step; stops when r crosses r_stop or phi crosses phi_stop.

    Returns (trajectory (m, 5) with columns t, r, phi, p_r, p_phi, status)
    where status is 1 for r_stop, 2 for phi_stop, 0 for n_max and the last
    row is the interpolated stopping point.
    """
    cap = n_max + 2 if record else 2
    out = np.empty((cap, 5))
    y = y0.copy()
    t = 0.0
    k = 0
    out[0, 0] = t
    out[0, 1:] = y
    status = 0
    r_side = 1.0 if y[0] > r_stop else -1.0
    p_side = 1.0 if y[1] > phi_stop else -1.0
    for _ in range(n_max):
        yn = _rk4(fields, prm, y, dt, with_p)
        tn = t + dt
        hit = 0
        w = 1.0
        if (yn[0] - r_stop) * r_side <= 0.0:
            hit = 1
            w = (y[0] - r_stop) / (y[0] - yn[0])
        if (yn[1] - phi_stop) * p_side <= 0.0:
            w2 = (y[1] - phi_stop) / (y[1] - yn[1])
            if hit == 0 or w2 < w:
                hit = 2
                w = w2
        if hit:
            # land on the stopping surface with a refined partial step
            for _ in range(3):
                yn = _rk4(fields, prm, y, w * dt, with_p)
                d = _rhs(fields, prm, yn, with_p)
                if hit == 1:
                    w += (r_stop - yn[0]) / (d[0] * dt)
                else:
                    w += (phi_stop - yn[1]) / (d[1] * dt)
            yn = _rk4(fields, prm, y, w * dt, with_p)
            tn = t + w * dt
            status = hit
        y = yn
        t = tn
        if record:
            k += 1
            out[k, 0] = t
            out[k, 1:] = y
        if hit:
            break
    if not record:
        k = 1
        out[1, 0] = t
        out[1, 1:] = y
    return out[:k + 1], status


def _require_jit(spec: SystemSpec):
    if spec.jit_fields is None:
        raise ValueError("spec has no compiled fields; ldp routines need jit_fields")
    return spec.jit_fields, np.asarray(spec.jit_params, dtype=float)


def flow(spec: SystemSpec, y0, dt: float, n_max: int, with_p: bool = True,
         r_stop: float = np.inf, phi_stop: float = np.inf, record: bool = True):
    """Integrate the Hamiltonian flow (or the deterministic flow if not with_p).

    Negative ``dt`` integrates backward in time.
    """
    fields, prm = _require_jit(spec)
    traj, status = _integrate(fields, prm, np.asarray(y0, dtype=float), float(dt), int(n_max),
                              bool(with_p), float(r_stop), float(phi_stop), bool(record))
    return traj, int(status)


def energy(spec: SystemSpec, traj: np.ndarray) -> np.ndarray:
    return hamiltonian((traj[:, 1], traj[:, 2]), (traj[:, 3], traj[:, 4]), spec)


# ---------------------------------------------------------------------------
# Rate function

def rate_function(t, r, phi, spec: SystemSpec) -> float:
    """I = 1/2 int (xdot - f).D^{-1}(xdot - f) dt by the trapezoidal rule.

    Velocities come from second-order finite differences on the sample grid.
    """
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    vr = np.gradient(r, t, edge_order=2) - spec.f_r(r, phi)
    vp = np.gradient(phi, t, edge_order=2) - spec.f_phi(r, phi)
    D = spec.diffusion(r, phi)
    det = D[:, 0, 0] * D[:, 1, 1] - D[:, 0, 1] ** 2
    if np.any(det <= 0):
        raise ValueError("diffusion matrix is singular along the path")
    q = (D[:, 1, 1] * vr ** 2 - 2 * D[:, 0, 1] * vr * vp + D[:, 0, 0] * vp ** 2) / det
    return float(0.5 * integrate.simpson(q, x=t))


def _velocity(traj: np.ndarray, spec: SystemSpec):
    r, phi, pr, pp = traj[:, 1], traj[:, 2], traj[:, 3], traj[:, 4]
    D = spec.diffusion(r, phi)
    vr = D[:, 0, 0] * pr + D[:, 0, 1] * pp + spec.f_r(r, phi)
    vp = D[:, 1, 0] * pr + D[:, 1, 1] * pp + spec.f_phi(r, phi)
    return vr, vp


def momentum_integral(traj: np.ndarray, spec: SystemSpec | None = None,
                      cumulative: bool = False):
    """int p . dx along a recorded trajectory (t, r, phi, p_r, p_phi).

    With ``spec`` the velocities dH/dp are evaluated exactly and p . xdot is
    integrated in t by Simpson's rule; without it the trapezoidal rule in
    the positions is used.
    """
    r, phi, pr, pp = traj[:, 1], traj[:, 2], traj[:, 3], traj[:, 4]
    if spec is None:
        seg = 0.5 * (pr[1:] + pr[:-1]) * np.diff(r) + 0.5 * (pp[1:] + pp[:-1]) * np.diff(phi)
        if cumulative:
            return np.concatenate([[0.0], np.cumsum(seg)])
        return float(np.sum(seg))
    vr, vp = _velocity(traj, spec)
    y = pr * vr + pp * vp
    if cumulative:
        return integrate.cumulative_simpson(y, x=traj[:, 0], initial=0.0)
    return float(integrate.simpson(y, x=traj[:, 0]))


# ---------------------------------------------------------------------------
# Linear fibers of the orbit manifolds

def periodic_linear_solution(c, d, n: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Periodic solution of y' = c(phi) y + d(phi) on [0, 1).

    Integrates one period from y = 0 with RK4 to obtain y(1) = M y(0) + b and
    returns the fixed point y(0) = b / (1 - M) propagated over the grid.
    """
    phi = np.arange(n) / n
    dphi = 1.0 / n

    def run(y0):
        ys = np.empty(n + 1)
        y = y0
        ys[0] = y
        for i in range(n):
            p = phi[i]
            k1 = c(p) * y + d(p)
            k2 = c(p + dphi / 2) * (y + dphi / 2 * k1) + d(p + dphi / 2)
            k3 = c(p + dphi / 2) * (y + dphi / 2 * k2) + d(p + dphi / 2)
            k4 = c(p + dphi) * (y + dphi * k3) + d(p + dphi)
            y = y + dphi / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            ys[i + 1] = y
        return ys

    b = run(0.0)[-1]
    M = run(1.0)[-1] - b
    y0 = b / (1.0 - M)
    return phi, run(y0)[:-1]


@dataclass
class Fiber:
    """Linear fiber p_r = rho / u(phi) of an orbit manifold, rho = r - r_orbit."""

    r_orbit: float
    phi: np.ndarray
    u: np.ndarray

    def __call__(self, phi):
        p = np.mod(np.asarray(phi, dtype=float), 1.0)
        return np.interp(p, np.append(self.phi, 1.0), np.append(self.u, self.u[0]))

    def momentum(self, rho, phi):
        return rho / self(phi)


def orbit_fiber(spec: SystemSpec, r_orbit: float, n: int = 2048) -> Fiber:
    """Fiber of the manifold leaving (stable orbit) or entering (unstable orbit).

    u solves du/dphi = T (2 a(phi) u + D_rr(r_orbit, phi)) with
    a = d f_r/dr on the orbit and T = 1/f_phi; the periodic solution is
    positive on the stable orbit and negative on the unstable orbit.
    """
    h = 1e-5

    def a(p):
        if spec.df_r_dr is not None:
            return float(spec.df_r_dr(r_orbit, p))
        return float((spec.f_r(r_orbit + h, p) - spec.f_r(r_orbit - h, p)) / (2 * h))

    T = lambda p: 1.0 / float(spec.f_phi(r_orbit, p))
    D = lambda p: float(spec.d_rr(np.array(r_orbit), np.array(p)))
    phi, u = periodic_linear_solution(lambda p: 2 * T(p) * a(p), lambda p: T(p) * D(p), n)
    return Fiber(r_orbit, phi, u)


def _zero_energy_pphi(spec: SystemSpec, r, phi, pr):
    """p_phi closest to 0 with H(r, phi, p_r, p_phi) = 0."""
    D = spec.diffusion(r, phi)
    a = 0.5 * D[..., 1, 1]
    b = D[..., 0, 1] * pr + spec.f_phi(r, phi)
    c = 0.5 * D[..., 0, 0] * pr ** 2 + spec.f_r(r, phi) * pr
    disc = np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))
    return -2.0 * c / (b + np.sign(b) * disc)


# ---------------------------------------------------------------------------
# Instanton

@dataclass
class InstantonPath:
    """Discretized instanton (t, r, phi, p_r, p_phi) and derived data.

    ``action`` includes the linear end corrections; ``s_star_table`` holds
    (delta, s*_delta) pairs; ``tail_constant`` is lim |y| exp(theta) along
    the approach to the unstable orbit (y = r / sqrt(2 lambdaT h_per)).
    """

    t: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    p_r: np.ndarray
    p_phi: np.ndarray
    action: float
    action_lagrangian: float
    max_energy: float
    alpha: float
    degenerate: bool
    s_star_table: np.ndarray
    tail_constant: float
    miss_curve: tuple = field(default_factory=tuple)

    def s_star(self, delta: float) -> float:
        """Phase in [0, 1) where the instanton crosses r = -delta."""
        if not -self.r[-1] < delta < -self.r[0]:
            raise ValueError("delta outside the resolved range of the instanton")
        return float(np.interp(-delta, self.r, self.phi) % 1.0)

    def table(self) -> np.ndarray:
        return np.column_stack([self.phi, self.r, self.p_r, self.p_phi])

    def summary(self) -> dict:
        return {"action": self.action, "action_lagrangian": self.action_lagrangian,
                "max_abs_energy": self.max_energy, "alpha": self.alpha,
                "degenerate": self.degenerate, "tail_constant": self.tail_constant,
                "n_points": int(self.r.size)}


@dataclass
class _Manifolds:
    spec: SystemSpec
    constants: OrbitConstants
    fiber_u: Fiber
    fiber_s: Fiber
    dt: float
    r_sec: float
    delta_init: float
    delta_end: float

    def unstable_start(self, alpha):
        r0 = -0.5 + self.delta_init
        pr = self.fiber_u.momentum(self.delta_init, alpha)
        pp = float(_zero_energy_pphi(self.spec, np.array(r0), np.array(alpha), np.array(pr)))
        return np.array([r0, alpha, pr, pp])

    def stable_start(self, phi_end):
        r0 = -self.delta_end
        pr = self.fiber_s.momentum(r0, phi_end)
        pp = float(_zero_energy_pphi(self.spec, np.array(r0), np.array(phi_end), np.array(pr)))
        return np.array([r0, phi_end, pr, pp])

    def n_max(self):
        return int(200.0 / abs(self.dt))

    def unstable_leg(self, alpha, r_stop=None, record=False):
        r_stop = self.r_sec if r_stop is None else r_stop
        return flow(self.spec, self.unstable_start(alpha), self.dt, self.n_max(),
                    r_stop=r_stop, record=record)

    def stable_leg(self, phi_end, record=False):
        return flow(self.spec, self.stable_start(phi_end), -self.dt, self.n_max(),
                    r_stop=self.r_sec, record=record)


def _section_curve(man: _Manifolds, n: int = 128):
    """p_r of the stable manifold on the section as a periodic function of phi."""
    ends = np.arange(n) / n
    pts = np.empty((n, 2))
    for i, e in enumerate(ends):
        traj, status = man.stable_leg(e)
        if status != 1:
            raise NonTransversalError("stable manifold does not reach the section")
        pts[i] = traj[-1, 2], traj[-1, 3]
    # phase on the section as a function of the end phase, unwrapped
    ph = np.unwrap(pts[:, 0] * 2 * np.pi) / (2 * np.pi)
    order = np.argsort(np.mod(ph, 1.0))
    x = np.mod(ph, 1.0)[order]
    y = pts[order, 1]
    xx = np.concatenate([x, [x[0] + 1.0]])
    yy = np.concatenate([y, [y[0]]])
    spline = interpolate.CubicSpline(xx, yy, bc_type="periodic")
    end_of = interpolate.interp1d(ph, ends, kind="cubic", fill_value="extrapolate")
    return spline, (ph, ends), end_of


def _miss(man, spline, alpha):
    traj, status = man.unstable_leg(alpha)
    if status != 1:
        return np.nan, np.nan
    phi_s, pr_s = traj[-1, 2], traj[-1, 3]
    base = float(spline(phi_s % 1.0))
    return pr_s - base, phi_s


def _tail_constant(r, phi, geometry: OrbitGeometry) -> float:
    """Average of |y| exp(theta) over the deep approach to r = 0."""
    lt = geometry.constants.lambdaT
    sel = (np.abs(r) < 1e-3) & (np.abs(r) > 1e-5)
    if not np.any(sel):
        return float("nan")
    y = np.abs(r[sel]) / np.sqrt(2.0 * lt * geometry.h_per(phi[sel]))
    return float(np.median(y * np.exp(geometry.theta(phi[sel]))))


def find_instanton(spec: SystemSpec, constants: OrbitConstants | None = None,
                   geometry: OrbitGeometry | None = None, dt_theta: float = DT_THETA,
                   delta_init: float = DELTA_INIT, delta_end: float = DELTA_END,
                   r_sec: float = R_SECTION, n_alpha: int = 64, xtol: float = 1e-10,
                   degenerate_tol: float = 1e-7) -> InstantonPath:
    """Zero-energy connection from the stable orbit r=-1/2 to the unstable orbit r=0.

    Shooting parameter alpha is the starting phase on the unstable fiber of
    the stable orbit at distance ``delta_init``. The miss function is the
    p_r-gap to the stable manifold of r = 0 on the section r = r_sec. The
    stable manifold is grown backward from its linear fiber at distance
    ``delta_end``. If both manifolds coincide to ``degenerate_tol`` the
    connection is not isolated; alpha = 0 is used and ``degenerate`` set.

    Raises
    ------
    NonTransversalError
        If the miss function does not change sign.
    """
    from .model import orbit_geometry

    constants = constants or compute_exponents(spec)
    geometry = geometry or orbit_geometry(spec, constants)
    dt = dt_theta / constants.lambda_plus
    man = _Manifolds(spec, constants, orbit_fiber(spec, -0.5), orbit_fiber(spec, 0.0),
                     dt, r_sec, delta_init, delta_end)
    spline, (ph_sec, ends), end_of = _section_curve(man)

    alphas = np.arange(n_alpha) / n_alpha
    miss = np.array([_miss(man, spline, a)[0] for a in alphas])
    if np.any(~np.isfinite(miss)):
        raise NonTransversalError("unstable manifold does not reach the section for all phases")
    degenerate = bool(np.max(np.abs(miss)) < degenerate_tol)
    if degenerate:
        roots = [0.0]
    else:
        mm = np.append(miss, miss[0])
        aa = np.append(alphas, 1.0)
        roots = []
        for i in range(n_alpha):
            if mm[i] == 0.0:
                roots.append(aa[i])
            elif mm[i] * mm[i + 1] < 0:
                roots.append(optimize.brentq(lambda a: _miss(man, spline, a)[0],
                                             aa[i], aa[i + 1], xtol=xtol))
        if not roots:
            raise NonTransversalError("miss function has no sign change: not transversal "
                                      "or outside the supported regime")

    best = None
    for a in roots:
        path = _assemble(man, a, end_of, ph_sec, geometry)
        if best is None or path.action < best.action:
            best = path
    best.degenerate = degenerate
    best.miss_curve = (alphas, miss)
    return best


def _assemble(man: _Manifolds, alpha, end_of, ph_sec, geometry) -> InstantonPath:
    up, _ = man.unstable_leg(alpha, record=True)
    phi_sec = up[-1, 2]
    # stable leg whose section phase matches, up to an integer shift
    shift = math.floor(phi_sec - ph_sec[0])
    target = phi_sec - shift
    lo, hi = ph_sec[0], ph_sec[0] + 1.0
    target = lo + ((target - lo) % 1.0)
    e0 = float(end_of(target))

    def sec_phase(e):
        tr, _ = man.stable_leg(e)
        return tr[-1, 2]

    # refine the end phase so that the section phases agree exactly
    f = lambda e: sec_phase(e) - target
    e_lo, e_hi = e0 - 0.02, e0 + 0.02
    try:
        e_star = optimize.brentq(f, e_lo, e_hi, xtol=1e-13)
    except ValueError:
        e_star = e0
    down, _ = man.stable_leg(e_star, record=True)
    down = down[::-1].copy()
    k = round(phi_sec - down[0, 2])
    down[:, 2] += k
    down[:, 0] = down[:, 0] - down[0, 0] + up[-1, 0]
    traj = np.vstack([up, down[1:]])

    spec = man.spec
    I_mom = momentum_integral(up, spec) + momentum_integral(down, spec)
    # linear pieces from the orbits to the truncation points
    corr = 0.5 * man.delta_init * traj[0, 3] - 0.5 * traj[-1, 1] * traj[-1, 3]
    # Lagrangian form on the two legs separately (the junction is not smooth in t)
    I_lag = (rate_function(up[:, 0], up[:, 1], up[:, 2], spec)
             + rate_function(down[:, 0], down[:, 1], down[:, 2], spec))
    H = energy(spec, traj)
    deltas = np.geomspace(1e-5, 0.4, 60)
    r, phi = traj[:, 1], traj[:, 2]
    s_tab = np.column_stack([deltas, np.interp(-deltas, r, phi) % 1.0])
    return InstantonPath(traj[:, 0], r, phi, traj[:, 3], traj[:, 4], I_mom + corr,
                         I_lag + corr, float(np.max(np.abs(H))), float(alpha), False,
                         s_tab, _tail_constant(r, phi, geometry))


def attach_instanton(geometry: OrbitGeometry, inst: InstantonPath) -> OrbitGeometry:
    """Give ``geometry`` the s*_delta map of ``inst``."""
    geometry.s_star = inst.s_star
    geometry.meta["instanton_action"] = inst.action
    geometry.meta["tail_constant"] = inst.tail_constant
    return geometry


def crossing_location(geometry: OrbitGeometry, inst: InstantonPath) -> float:
    """Location l with theta(phi_tau0) - |log sigma| ~ Z/2 + l (mod lambdaT).

    Arriving along the instanton, the scaled distance obeys
    |y| ~ K exp(-theta); the linear hitting law from there gives
    l = log K + log(lambda_+)/2.
    """
    return math.log(inst.tail_constant) + 0.5 * math.log(geometry.constants.lambda_plus)


# ---------------------------------------------------------------------------
# Action to a level and the quasipotential on the unstable orbit

def action_to_level(spec: SystemSpec, delta: float, n_alpha: int = 256,
                    constants: OrbitConstants | None = None, dt_theta: float = DT_THETA):
    """Arrival points of the unstable manifold of r = -1/2 on the level r = -delta.

    Each starting phase on the unstable fiber is followed until its first
    crossing of the level. Returns (unwrapped arrival phase, action) arrays
    for the trajectories that reach it.
    """
    constants = constants or compute_exponents(spec)
    man = _Manifolds(spec, constants, orbit_fiber(spec, -0.5), orbit_fiber(spec, 0.0),
                     dt_theta / constants.lambda_plus, R_SECTION, DELTA_INIT, DELTA_END)
    ph = np.full(n_alpha, np.nan)
    act = np.full(n_alpha, np.nan)
    for i, a in enumerate(np.arange(n_alpha) / n_alpha):
        traj, status = man.unstable_leg(a, r_stop=-delta, record=True)
        if status != 1:
            continue
        ph[i] = traj[-1, 2]
        act[i] = momentum_integral(traj, spec) + 0.5 * DELTA_INIT * traj[0, 3]
    return ph, act


def _densify(ph, act, factor: int = 16, jump: float = 0.05):
    """Interpolate arrivals between neighbouring starting phases on one branch."""
    out_p, out_a = [], []
    n = ph.size
    w = np.arange(factor) / factor
    for i in range(n):
        j = (i + 1) % n
        p0, p1 = ph[i], ph[j] + (1.0 if j == 0 else 0.0)
        if not (np.isfinite(p0) and np.isfinite(p1)):
            if np.isfinite(p0):
                out_p.append([p0])
                out_a.append([act[i]])
            continue
        if abs(p1 - p0) < jump:
            out_p.append(p0 + w * (p1 - p0))
            out_a.append(act[i] + w * (act[j] - act[i]))
        else:
            out_p.append([p0])
            out_a.append([act[i]])
    return np.concatenate(out_p), np.concatenate(out_a)


def level_action_profile(spec: SystemSpec, delta: float, n_phase: int = 256,
                         n_alpha: int = 256, constants: OrbitConstants | None = None):
    """Minimal cost of a first passage through r = -delta at phase phi_hat (mod 1).

    Candidates are the unstable-manifold trajectories arriving at the level,
    optionally followed by holding on the level against the drift (running
    cost f_r^2 / (2 D_rr f_phi) per unit phase) until phi_hat. The holding
    extension makes the profile defined at phases that no trajectory of the
    manifold reaches first; it is an upper bound there.

    Returns (phi_hat grid on [0, 1), cost).
    """
    ph, act = action_to_level(spec, delta, n_alpha=n_alpha, constants=constants)
    if not np.any(np.isfinite(ph)):
        raise ValueError("no trajectory reaches the level")
    ph, act = _densify(ph, act)
    grid = np.arange(n_phase) / n_phase
    # cumulative holding cost over two periods on a fine grid
    m = 4096
    x = np.arange(2 * m + 1) / m
    rate = spec.f_r(np.full_like(x, -delta), x) ** 2 / (
        2.0 * spec.d_rr(np.full_like(x, -delta), x) * spec.f_phi(np.full_like(x, -delta), x))
    cum = integrate.cumulative_simpson(rate, x=x, initial=0.0)
    a0 = np.mod(ph, 1.0)
    wait = np.mod(grid[:, None] - a0[None, :], 1.0)
    hold = np.interp(a0[None, :] + wait, x, cum) - np.interp(a0, x, cum)[None, :]
    cost = np.min(act[None, :] + hold, axis=1)
    return grid, cost


def periodic_extrema(values, tol: float = 0.0) -> tuple[int, int]:
    """Numbers of local maxima and minima of a periodic sequence.

    Oscillations smaller than ``tol`` are ignored (hysteresis).
    """
    v = np.asarray(values, dtype=float)
    n = v.size
    start = int(np.argmax(v))
    seq = np.roll(v, -start)
    seq = np.append(seq, seq[0])
    n_max = n_min = 0
    direction = -1      # leaving the global maximum
    ref = seq[0]
    for x in seq[1:]:
        if direction < 0:
            if x < ref:
                ref = x
            elif x - ref > tol:
                n_min += 1
                direction = 1
                ref = x
        else:
            if x > ref:
                ref = x
            elif ref - x > tol:
                n_max += 1
                direction = -1
                ref = x
    if direction > 0:
        n_max += 1      # back at the global maximum
    return n_max, n_min


def quasipotential_on_boundary(spec: SystemSpec, phases, inst: InstantonPath | None = None,
                               constants: OrbitConstants | None = None,
                               geometry: OrbitGeometry | None = None,
                               n_alpha: int = 64) -> np.ndarray:
    """Quasipotential V(0, phi_b) at the given boundary phases.

    Two families of candidate paths are minimized over: the instanton
    followed into the linear zone and stopped at a phase congruent to phi_b
    (plus the linear cost r^2/(2T h) of the remaining approach), and
    unstable-manifold trajectories of the stable orbit that cross r = 0 at
    a phase congruent to phi_b.
    """
    from .model import orbit_geometry

    constants = constants or compute_exponents(spec)
    geometry = geometry or orbit_geometry(spec, constants)
    inst = inst or find_instanton(spec, constants, geometry)
    phases = np.atleast_1d(np.asarray(phases, dtype=float))

    traj = np.column_stack([inst.t, inst.r, inst.phi, inst.p_r, inst.p_phi])
    cum = momentum_integral(traj, spec, cumulative=True) + 0.5 * DELTA_INIT * traj[0, 3]
    tail = np.abs(inst.r) < 1e-3
    ph_t, cum_t = inst.phi[tail], cum[tail]
    r_t, pr_t = inst.r[tail], inst.p_r[tail]

    V = np.full(phases.size, np.inf)
    for i, pb in enumerate(phases):
        n_lo = math.ceil(ph_t[0] - pb)
        n_hi = math.floor(ph_t[-1] - pb)
        for n in range(n_lo, n_hi + 1):
            x = pb + n
            c = np.interp(x, ph_t, cum_t)
            rr = np.interp(x, ph_t, r_t)
            pr = np.interp(x, ph_t, pr_t)
            V[i] = min(V[i], c - 0.5 * rr * pr)

    if not inst.degenerate:
        man = _Manifolds(spec, constants, orbit_fiber(spec, -0.5), orbit_fiber(spec, 0.0),
                         DT_THETA / constants.lambda_plus, 0.0, DELTA_INIT, DELTA_END)
        cross_ph, cross_I = [], []
        for a in np.arange(n_alpha) / n_alpha:
            tr, status = man.unstable_leg(a, r_stop=0.0, record=True)
            if status == 1:
                cross_ph.append(tr[-1, 2] % 1.0)
                cross_I.append(momentum_integral(tr, spec) + 0.5 * DELTA_INIT * tr[0, 3])
        if len(cross_ph) >= 2:
            o = np.argsort(cross_ph)
            cp, ci = np.array(cross_ph)[o], np.array(cross_I)[o]
            for i, pb in enumerate(phases):
                j = np.argmin(np.abs((cp - pb + 0.5) % 1.0 - 0.5))
                V[i] = min(V[i], ci[j])
    return V


# ---------------------------------------------------------------------------
# Gamma^s curves

@dataclass
class GammaCurve:
    """Periodic curve r = c(phi) tabulated on [0, 1)."""

    phi: np.ndarray
    r: np.ndarray
    s: float
    side: int

    def __call__(self, phi):
        p = np.mod(np.asarray(phi, dtype=float), 1.0)
        return np.interp(p, np.append(self.phi, 1.0), np.append(self.r, self.r[0]))

    def table(self) -> np.ndarray:
        return np.column_stack([self.phi, self.r])


def _theta_inverse(geometry: OrbitGeometry, target):
    """phi with theta(phi) = target (theta strictly increasing)."""
    lt = geometry.constants.lambdaT
    grid = geometry.h_per.phi
    th = geometry.theta(grid)
    n = np.floor((target - th[0]) / lt)
    rem = target - n * lt
    xp = np.append(grid, 1.0)
    fp = np.append(th, th[0] + lt)
    return n + np.interp(rem, fp, xp)


def gamma_u_time(s: float, delta: float, geometry: OrbitGeometry) -> float:
    """theta-time separating the delta-neighbourhood from Gamma^s."""
    return s - math.log(delta) - 0.5 * math.log(2.0 * geometry.constants.lambda_plus)


def gamma_s_curve(spec: SystemSpec, geometry: OrbitGeometry, s: float, side: int,
                  delta: float = 2.5e-4, n: int = 256, dt_theta: float = DT_THETA) -> GammaCurve:
    """One of the curves Gamma^s_+ (side=+1) or Gamma^s_- (side=-1).

    Gamma^s_+ is the image of {r = delta sqrt(2 lambdaT h_per)} under the
    deterministic flow after theta-time u = s - log delta - log(2 lambda_+)/2.
    Gamma^s_- is obtained from {r = -delta sqrt(2 lambdaT h_per)} on the
    stable manifold of r = 0 by running the Hamiltonian flow backward for
    the same theta-time. In the linear zone both reduce to
    |r| = e^s sqrt(T_+ h_per(phi)).
    """
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    c = geometry.constants
    u = gamma_u_time(s, delta, geometry)
    if u <= 0:
        raise ValueError("delta too large for this s: need s - log(delta) > log(2 lambda_+)/2")
    dt = dt_theta / c.lambda_plus
    fiber = orbit_fiber(spec, 0.0) if side < 0 else None
    ends_phi, ends_r = [], []
    for p0 in np.arange(n) / n:
        r0 = side * delta * float(geometry.scale(p0))
        target = float(_theta_inverse(geometry, geometry.theta(p0) + (u if side > 0 else -u)))
        if side > 0:
            y0 = np.array([r0, p0, 0.0, 0.0])
            traj, status = flow(spec, y0, dt, int(100 / dt), with_p=False,
                                r_stop=0.5, phi_stop=target, record=False)
        else:
            pr = fiber.momentum(r0, p0)
            pp = float(_zero_energy_pphi(spec, np.array(r0), np.array(p0), np.array(pr)))
            y0 = np.array([r0, p0, pr, pp])
            traj, status = flow(spec, y0, -dt, int(100 / dt), with_p=True,
                                r_stop=-0.5, phi_stop=target, record=False)
        if status != 2:
            raise ValueError("curve left the half-period strip before the required time; "
                             "s too large for this delta")
        ends_phi.append(traj[-1, 2])
        ends_r.append(traj[-1, 1])
    ph = np.mod(np.array(ends_phi), 1.0)
    rr = np.array(ends_r)
    o = np.argsort(ph)
    ph, rr = ph[o], rr[o]
    grid = np.arange(n) / n
    xp = np.concatenate([ph[-1:] - 1.0, ph, ph[:1] + 1.0])
    fp = np.concatenate([rr[-1:], rr, rr[:1]])
    return GammaCurve(grid, np.interp(grid, xp, fp), float(s), side)


@dataclass
class GammaPair:
    minus: GammaCurve
    plus: GammaCurve
    s: float
    delta: float
    refinement_gap: float


def gamma_s_curves(spec: SystemSpec, geometry: OrbitGeometry, s: float, delta: float = 2.5e-4,
                   n: int = 256, check: bool = True) -> GammaPair:
    """Gamma^s_- and Gamma^s_+, with the delta vs delta/2 refinement gap."""
    minus = gamma_s_curve(spec, geometry, s, -1, delta, n)
    plus = gamma_s_curve(spec, geometry, s, +1, delta, n)
    gap = float("nan")
    if check:
        m2 = gamma_s_curve(spec, geometry, s, -1, delta / 2, n)
        p2 = gamma_s_curve(spec, geometry, s, +1, delta / 2, n)
        gap = float(max(np.max(np.abs(m2.r - minus.r)), np.max(np.abs(p2.r - plus.r))))
    return GammaPair(minus, plus, float(s), float(delta), gap)


# ---------------------------------------------------------------------------
# export

def export_instanton(inst: InstantonPath, directory) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savetxt(d / "instanton.csv", inst.table(), delimiter=",", header="phi,r,p_r,p_phi",
               comments="", fmt="%.17g")
    np.savetxt(d / "s_star.csv", inst.s_star_table, delimiter=",", header="delta,s_star",
               comments="", fmt="%.17g")
    (d / "instanton.json").write_text(json.dumps(inst.summary(), indent=2))
    return {"csv": str(d / "instanton.csv"), "json": str(d / "instanton.json")}


def export_gamma(curve: GammaCurve, path) -> Path:
    path = Path(path)
    np.savetxt(path, curve.table(), delimiter=",", header="phi,r", comments="", fmt="%.17g")
    return path
