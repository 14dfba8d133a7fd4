"""
Planar periodic SDE systems and the geometry of their periodic orbits.

A system is

    dr   = f_r(r, phi) dt   + sigma g_r(r, phi) dW
    dphi = f_phi(r, phi) dt + sigma g_phi(r, phi) dW

with period 1 in both variables, unstable orbits at integer r and stable
orbits at half-integer r. This module builds such systems, checks their
structural assumptions, and computes the orbit data used downstream: the
characteristic exponents, the periodic function h_per, and the natural
orbit parametrizations theta and theta_delta.
"""
from __future__ import annotations

import ast
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _jit

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

TWO_PI = 2.0 * math.pi
FD_STEP = 1e-5
N_TAB = 1024


class StructuralError(ValueError):
    """A system violates an assumption of the model class."""


@dataclass(frozen=True)
class SystemSpec:
    """Drift and diffusion of a planar periodic SDE.

    Field callables are vectorized over numpy arrays. ``g_r`` and ``g_phi``
    return arrays with a trailing axis of length k (number of noise
    channels). ``jit_fields``/``jit_params`` give a compiled scalar version
    used by the simulation kernels.
    """

    name: str
    params: dict
    f_r: Callable
    f_phi: Callable
    g_r: Callable
    g_phi: Callable
    df_r_dr: Callable | None = None
    jit_fields: Callable | None = None
    jit_params: np.ndarray | None = None
    # potential U(r) with f_r = -U'(r), present when r evolves on its own
    radial_potential: Callable | None = None
    periodic: bool = True

    @property
    def k(self) -> int:
        return int(np.shape(self.g_r(np.zeros(1), np.zeros(1)))[-1])

    def diffusion(self, r, phi) -> np.ndarray:
        """D = g g^T, shape (..., 2, 2)."""
        g = np.stack([self.g_r(r, phi), self.g_phi(r, phi)], axis=-2)
        return g @ np.swapaxes(g, -1, -2)

    def d_rr(self, r, phi):
        gr = self.g_r(r, phi)
        return np.sum(gr * gr, axis=-1)

    def dfr_dr(self, r, phi, step: float = FD_STEP):
        if self.df_r_dr is not None:
            return self.df_r_dr(r, phi)
        return (self.f_r(r + step, phi) - self.f_r(r - step, phi)) / (2.0 * step)

    def describe(self) -> dict:
        return {"builder": self.name, **self.params}

    def __reduce__(self):
        # field callables are closures; rebuild from the builder registry instead
        if self.name not in BUILDERS:
            raise TypeError(f"system {self.name!r} is not registered and cannot be pickled")
        return build_from_dict, (self.describe(),)


def _const(val, like):
    return np.full(np.broadcast(*like).shape, float(val)) if like else float(val)


def build_melnikov_system(eps: float, omega: float) -> SystemSpec:
    """f_r = sin(2 pi r)[1 + eps sin(2 pi r) cos(2 pi phi)], f_phi = omega, g = I.

    Unstable orbit at r = 0, stable orbits at r = -1/2 and r = 1/2.
    """
    if not abs(eps) < 0.5:
        raise ValueError(f"|eps| must be < 0.5 to keep the orbit structure (got {eps})")
    if not omega > 0:
        raise ValueError("omega must be positive")
    eps = float(eps)
    omega = float(omega)

    def f_r(r, phi):
        s = np.sin(TWO_PI * np.asarray(r))
        return s * (1.0 + eps * s * np.cos(TWO_PI * np.asarray(phi)))

    def df_r_dr(r, phi):
        s = np.sin(TWO_PI * np.asarray(r))
        c = np.cos(TWO_PI * np.asarray(r))
        return TWO_PI * c * (1.0 + 2.0 * eps * s * np.cos(TWO_PI * np.asarray(phi)))

    def f_phi(r, phi):
        return np.full(np.broadcast(np.asarray(r), np.asarray(phi)).shape, omega)

    def g_r(r, phi):
        shape = np.broadcast(np.asarray(r), np.asarray(phi)).shape
        out = np.zeros(shape + (2,))
        out[..., 0] = 1.0
        return out

    def g_phi(r, phi):
        shape = np.broadcast(np.asarray(r), np.asarray(phi)).shape
        out = np.zeros(shape + (2,))
        out[..., 1] = 1.0
        return out

    pot = None
    if eps == 0.0:
        def pot(r):
            return np.cos(TWO_PI * np.asarray(r)) / TWO_PI

    return SystemSpec("melnikov", {"eps": eps, "omega": omega}, f_r, f_phi, g_r, g_phi,
                      df_r_dr=df_r_dr, jit_fields=_jit.melnikov_fields,
                      jit_params=np.array([eps, omega]), radial_potential=pot)


@dataclass(frozen=True)
class WashboardSystem:
    """Averaged washboard dynamics and its planar analogue.

    Attributes
    ----------
    potential, dpotential : callables
        V(psi) = nu psi - eps int_0^psi sin(2 pi x) dx and its derivative.
        The averaged 1D system is dpsi/dt = -V'(psi).
    stationary_points : tuple
        (psi_unstable, psi_stable) in [0, 1).
    spec : SystemSpec
        Planar system with f_phi = omega in the recentred coordinate
        r = R(psi), which puts the unstable point at r = 0 and the stable
        one at r = 1/2.
    to_r, to_psi : callables
        The recentring map and its inverse.
    """

    nu: float
    eps: float
    omega: float
    potential: Callable
    dpotential: Callable
    stationary_points: tuple
    spec: SystemSpec
    to_r: Callable
    to_psi: Callable


def build_washboard_system(nu: float, eps: float, omega: float) -> WashboardSystem:
    """Washboard potential system with Adler nonlinearity sin(2 pi psi).

    Requires |nu| < |eps| (two stationary points per period).
    """
    if not abs(nu) < abs(eps):
        raise ValueError(f"no locked state: need |nu| < |eps| (nu={nu}, eps={eps})")
    if not omega > 0:
        raise ValueError("omega must be positive")
    nu, eps, omega = float(nu), float(eps), float(omega)

    def V(psi):
        psi = np.asarray(psi, dtype=float)
        return nu * psi + eps * (np.cos(TWO_PI * psi) - 1.0) / TWO_PI

    def dV(psi):
        return nu - eps * np.sin(TWO_PI * np.asarray(psi, dtype=float))

    a1 = math.asin(nu / eps) / TWO_PI
    roots = [a1 % 1.0, (0.5 - a1) % 1.0]
    # unstable where d/dpsi(-V') = 2 pi eps cos(2 pi psi) > 0
    if eps * math.cos(TWO_PI * roots[0]) > 0:
        psi_u, psi_s = roots
    else:
        psi_s, psi_u = roots
    x_s = (psi_s - psi_u) % 1.0
    alpha = (0.5 - x_s) / (1.0 - math.cos(TWO_PI * x_s))
    if not TWO_PI * abs(alpha) < 1.0:
        raise ValueError("recentring map not monotone; |nu/eps| too close to 1")
    prm = np.array([nu, eps, omega, psi_u, alpha])

    def to_r(psi):
        x = np.asarray(psi, dtype=float) - psi_u
        return x + alpha * (1.0 - np.cos(TWO_PI * x))

    def to_psi(r):
        r = np.asarray(r, dtype=float)
        k = np.floor(r)
        y = r - k
        x = y.copy()
        for _ in range(60):
            dx = (x + alpha * (1.0 - np.cos(TWO_PI * x)) - y) / (1.0 + TWO_PI * alpha * np.sin(TWO_PI * x))
            x = x - dx
            if np.all(np.abs(dx) < 1e-15):
                break
        return x + k + psi_u

    def rprime(r):
        x = to_psi(r) - psi_u
        return 1.0 + TWO_PI * alpha * np.sin(TWO_PI * x)

    def f_r(r, phi):
        r, phi = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(phi, dtype=float))
        return rprime(r) * (-dV(to_psi(r)))

    def f_phi(r, phi):
        return np.full(np.broadcast(np.asarray(r), np.asarray(phi)).shape, omega)

    def g_r(r, phi):
        r, phi = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(phi, dtype=float))
        out = np.zeros(r.shape + (2,))
        out[..., 0] = rprime(r)
        return out

    def g_phi(r, phi):
        shape = np.broadcast(np.asarray(r), np.asarray(phi)).shape
        out = np.zeros(shape + (2,))
        out[..., 1] = 1.0
        return out

    spec = SystemSpec("washboard", {"nu": nu, "eps": eps, "omega": omega}, f_r, f_phi,
                      g_r, g_phi, jit_fields=_jit.washboard_fields, jit_params=prm)
    return WashboardSystem(nu, eps, omega, V, dV, (psi_u, psi_s), spec, to_r, to_psi)


def build_linear_system(lam: float, omega: float = 1.0) -> SystemSpec:
    """Linearization dr = lam r dt + sigma dW_1, dphi = omega dt + sigma dW_2.

    Not periodic in r; used as an oracle near the unstable orbit.
    """
    if not lam > 0 or not omega > 0:
        raise ValueError("lam and omega must be positive")

    def f_r(r, phi):
        return lam * np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(phi))[0]

    def df_r_dr(r, phi):
        return np.full(np.broadcast(np.asarray(r), np.asarray(phi)).shape, float(lam))

    def f_phi(r, phi):
        return np.full(np.broadcast(np.asarray(r), np.asarray(phi)).shape, float(omega))

    def g_r(r, phi):
        shape = np.broadcast(np.asarray(r), np.asarray(phi)).shape
        out = np.zeros(shape + (2,))
        out[..., 0] = 1.0
        return out

    def g_phi(r, phi):
        shape = np.broadcast(np.asarray(r), np.asarray(phi)).shape
        out = np.zeros(shape + (2,))
        out[..., 1] = 1.0
        return out

    return SystemSpec("linear", {"lam": float(lam), "omega": float(omega)}, f_r, f_phi,
                      g_r, g_phi, df_r_dr=df_r_dr, jit_fields=_jit.linear_fields,
                      jit_params=np.array([float(lam), float(omega)]),
                      radial_potential=lambda r: -0.5 * lam * np.asarray(r) ** 2,
                      periodic=False)


def build_double_well_system(omega: float = 1.0) -> SystemSpec:
    """dr = -V'(r) dt + sigma dW_1 with V = r^4/4 - r^2/2, and dphi = omega dt + sigma dW_2.

    A one-dimensional gradient system carried as a planar one; r = 0 is the
    saddle (V''(0) = -1) and r = +-1 the wells. Not periodic in r.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")

    def f_r(r, phi):
        r = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(phi))[0]
        return r - r ** 3

    def df_r_dr(r, phi):
        r = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(phi))[0]
        return 1.0 - 3.0 * r ** 2

    lin = build_linear_system(1.0, omega)
    return SystemSpec("double_well", {"omega": float(omega)}, f_r, lin.f_phi, lin.g_r,
                      lin.g_phi, df_r_dr=df_r_dr, jit_fields=_jit.double_well_fields,
                      jit_params=np.array([1.0, float(omega)]),
                      radial_potential=lambda r: np.asarray(r) ** 4 / 4 - np.asarray(r) ** 2 / 2,
                      periodic=False)


BUILDERS = {
    "melnikov": lambda p: build_melnikov_system(p.get("eps", 0.0), p.get("omega", 1.0)),
    "washboard": lambda p: build_washboard_system(p["nu"], p["eps"], p.get("omega", 1.0)).spec,
    "linear": lambda p: build_linear_system(p.get("lam", 1.0), p.get("omega", 1.0)),
    "double_well": lambda p: build_double_well_system(p.get("omega", 1.0)),
}


def build_from_dict(d: dict) -> SystemSpec:
    d = dict(d)
    name = d.pop("builder", d.pop("name", None))
    if name not in BUILDERS:
        raise ValueError(f"unknown builder {name!r}; choose from {sorted(BUILDERS)}")
    return BUILDERS[name](d)


def load_config(path) -> dict:
    """Read a TOML key-value configuration file."""
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_system(path) -> SystemSpec:
    """Build the system described in the ``[system]`` table of a config file.

    Example file::

        [system]
        builder = "melnikov"
        eps = 0.05
        omega = 1.0
    """
    cfg = load_config(path)
    return build_from_dict(cfg.get("system", cfg))


def parse_value(text: str):
    """Interpret a command-line override value."""
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


# ---------------------------------------------------------------------------
# Invariant validation

@dataclass
class InvariantReport:
    checks: dict
    c1: float
    c2: float
    min_f_phi: float
    max_orbit_drift: float

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def validate_spec(spec: SystemSpec, n_grid: int = 64, tol: float = 1e-10) -> InvariantReport:
    """Check the structural assumptions on an n_grid x n_grid sample grid."""
    phi = np.arange(n_grid) / n_grid
    r = -1.0 + 2.0 * np.arange(n_grid) / n_grid
    R, P = np.meshgrid(r, phi, indexing="ij")

    orbit_r = np.arange(-2, 3) / 2.0
    Ro, Po = np.meshgrid(orbit_r, phi, indexing="ij")
    drift_on_orbit = float(np.max(np.abs(spec.f_r(Ro, Po))))

    D = spec.diffusion(R, P)
    eig = np.linalg.eigvalsh(D)
    c1 = float(eig.min())
    c2 = float(eig.max())
    fphi = spec.f_phi(R, P)
    min_fphi = float(np.min(fphi))

    checks = {
        "orbits": drift_on_orbit < tol or not spec.periodic,
        "ellipticity": c1 > 0.0,
        "f_phi_positive": min_fphi > 0.0,
        "finite": bool(np.all(np.isfinite(spec.f_r(R, P))) and np.all(np.isfinite(D))),
    }
    per = True
    for fn in (spec.f_r, spec.f_phi, spec.d_rr):
        a = fn(R, P)
        if spec.periodic:
            per &= bool(np.allclose(fn(R + 1.0, P), a, atol=1e-9, rtol=0))
        per &= bool(np.allclose(fn(R, P + 1.0), a, atol=1e-9, rtol=0))
    checks["periodic"] = per
    return InvariantReport(checks, c1, c2, min_fphi, drift_on_orbit)


# ---------------------------------------------------------------------------
# Orbit constants

@dataclass(frozen=True)
class OrbitConstants:
    lambda_plus: float
    lambda_minus: float
    T_plus: float
    T_minus: float

    @property
    def lambdaT(self) -> float:
        return self.lambda_plus * self.T_plus

    @property
    def lambdaT_minus(self) -> float:
        return self.lambda_minus * self.T_minus


def compute_exponents(spec: SystemSpec, n_quad: int = 256, fd_step: float = FD_STEP,
                      use_analytic: bool = True) -> OrbitConstants:
    """Characteristic exponents and periods of the orbits r = 0 and r = 1/2.

    The phi-average of d f_r/dr is computed with the periodic rectangle rule,
    which is spectrally accurate for smooth periodic integrands. Derivatives
    come from the analytic expression when the system provides one and from
    central differences otherwise.
    """
    phi = np.arange(n_quad) / n_quad
    if use_analytic and spec.df_r_dr is not None:
        d0 = spec.df_r_dr(np.zeros_like(phi), phi)
        dh = spec.df_r_dr(np.full_like(phi, 0.5), phi)
    else:
        fd = lambda r: (spec.f_r(r + fd_step, phi) - spec.f_r(r - fd_step, phi)) / (2 * fd_step)
        d0 = fd(np.zeros_like(phi))
        dh = fd(np.full_like(phi, 0.5))
    lam_p = float(np.mean(d0))
    lam_m = float(-np.mean(dh))
    if not lam_p > 0:
        raise StructuralError(f"orbit r=0 is not unstable (lambda_+ = {lam_p})")
    if not lam_m > 0:
        raise StructuralError(f"orbit r=1/2 is not stable (lambda_- = {lam_m})")
    T_p = 1.0 / float(np.mean(spec.f_phi(np.zeros_like(phi), phi)))
    T_m = 1.0 / float(np.mean(spec.f_phi(np.full_like(phi, 0.5), phi)))
    return OrbitConstants(lam_p, lam_m, T_p, T_m)


# ---------------------------------------------------------------------------
# h_per and the orbit parametrizations

@dataclass
class HperTable:
    phi: np.ndarray
    values: np.ndarray
    horizon: float
    residual: float

    def __call__(self, phi):
        p = np.mod(np.asarray(phi, dtype=float), 1.0)
        xp = np.append(self.phi, 1.0)
        fp = np.append(self.values, self.values[0])
        return np.interp(p, xp, fp)


def _spectral_derivative(values: np.ndarray) -> np.ndarray:
    n = values.size
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return np.real(np.fft.ifft(2j * np.pi * k * np.fft.fft(values)))


def h_per_residual(values: np.ndarray, spec: SystemSpec, constants: OrbitConstants) -> float:
    n = values.size
    phi = np.arange(n) / n
    dh = _spectral_derivative(values)
    drr = spec.d_rr(np.zeros(n), phi)
    return float(np.max(np.abs(dh - 2.0 * constants.lambdaT * values + drr)))


def solve_h_per(spec: SystemSpec, constants: OrbitConstants, n: int = N_TAB,
                horizon: float | None = None, panel: float = 0.125,
                order: int = 20, tol: float = 1e-8) -> HperTable:
    """Bounded periodic solution of dh/dphi = 2 lambdaT h - D_rr(0, phi).

    Evaluates h(phi) = int_phi^inf exp(2 lambdaT (phi - s)) D_rr(0, s) ds
    truncated at s = phi + H with H = 6 log(10)/lambdaT, where the kernel
    has decayed below 1e-12. Panels of Gauss-Legendre nodes are used. If the
    residual of the ODE exceeds ``tol`` the horizon is doubled.
    """
    lt = constants.lambdaT
    if not lt > 0:
        raise ValueError("lambda_+ T_+ must be positive")
    H = 6.0 * math.log(10.0) / lt if horizon is None else float(horizon)
    phi = np.arange(n) / n
    xg, wg = np.polynomial.legendre.leggauss(order)
    for _ in range(4):
        n_pan = max(1, int(math.ceil(H / panel)))
        edges = np.linspace(0.0, H, n_pan + 1)
        a, b = edges[:-1], edges[1:]
        u = (0.5 * (b - a)[:, None] * xg[None, :] + 0.5 * (a + b)[:, None]).ravel()
        w = (0.5 * (b - a)[:, None] * wg[None, :]).ravel()
        kern = w * np.exp(-2.0 * lt * u)
        s = phi[:, None] + u[None, :]
        drr = spec.d_rr(np.zeros_like(s), s)
        values = drr @ kern if drr.ndim == 2 else (drr * kern).sum(axis=-1)
        res = h_per_residual(values, spec, constants)
        if res <= tol:
            break
        H *= 2.0
    return HperTable(phi, values, H, res)


@dataclass
class OrbitGeometry:
    """h_per table and the parametrizations theta, theta_delta.

    ``s_star`` maps a level delta to the phase in [0, 1) at which the
    instanton crosses r = -delta; it is attached by the large-deviation
    module.
    """

    constants: OrbitConstants
    h_per: HperTable
    s_star: Callable[[float], float] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def h0(self) -> float:
        return float(self.h_per.values[0])

    def theta(self, phi):
        return theta(phi, self)

    def theta_delta(self, phi, delta):
        return theta_delta(phi, delta, self)

    def theta_delta_shift(self, delta: float) -> float:
        if self.s_star is None:
            raise ValueError("s_star not available; attach an instanton first")
        s = self.s_star(delta)
        return -math.log(delta) + math.log(float(self.h_per(s)) / self.h0)

    def scale(self, phi):
        """sqrt(2 lambdaT h_per(phi)): converts y to r near the orbit."""
        return np.sqrt(2.0 * self.constants.lambdaT * self.h_per(phi))

    def table(self) -> np.ndarray:
        p = self.h_per.phi
        return np.column_stack([p, self.h_per.values, self.theta(p)])


def theta(phi, geometry: OrbitGeometry):
    """theta(phi) = lambdaT phi - 0.5 log(h_per(phi) / (2 h_per(0)^2))."""
    phi = np.asarray(phi, dtype=float)
    h = geometry.h_per(phi)
    return geometry.constants.lambdaT * phi - 0.5 * np.log(h / (2.0 * geometry.h0 ** 2))


def theta_delta(phi, delta: float, geometry: OrbitGeometry):
    """theta(phi) - log delta + log(h_per(s*_delta)/h_per(0))."""
    return theta(phi, geometry) + geometry.theta_delta_shift(delta)


def orbit_geometry(spec: SystemSpec, constants: OrbitConstants | None = None,
                   n: int = N_TAB) -> OrbitGeometry:
    constants = constants or compute_exponents(spec)
    return OrbitGeometry(constants, solve_h_per(spec, constants, n=n))


def export_geometry_csv(geometry: OrbitGeometry, path) -> Path:
    """Write columns (phi, h_per, theta)."""
    path = Path(path)
    np.savetxt(path, geometry.table(), delimiter=",", header="phi,h_per,theta",
               comments="", fmt="%.17g")
    return path
