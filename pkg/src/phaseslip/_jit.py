"""Compiled scalar field evaluators shared by the simulation kernels.

Each evaluator has the signature ``f(r, phi, prm)`` and returns the tuple
``(f_r, f_phi, g_r1, g_r2, g_phi1, g_phi2)`` for two noise channels.
"""
import math

import numba as nb

TWO_PI = 2.0 * math.pi


@nb.njit(cache=True)
def melnikov_fields(r, phi, prm):
    # prm = (eps, omega)
    s = math.sin(TWO_PI * r)
    fr = s * (1.0 + prm[0] * s * math.cos(TWO_PI * phi))
    return fr, prm[1], 1.0, 0.0, 0.0, 1.0


@nb.njit(cache=True)
def _washboard_psi(r, prm):
    # invert r = x + alpha (1 - cos 2 pi x) by Newton, x = psi - psi_u
    alpha = prm[4]
    k = math.floor(r)
    y = r - k
    x = y
    for _ in range(50):
        g = x + alpha * (1.0 - math.cos(TWO_PI * x)) - y
        dg = 1.0 + TWO_PI * alpha * math.sin(TWO_PI * x)
        dx = g / dg
        x -= dx
        if abs(dx) < 1e-15:
            break
    return x + k


@nb.njit(cache=True)
def washboard_fields(r, phi, prm):
    # prm = (nu, eps, omega, psi_u, alpha)
    x = _washboard_psi(r, prm)
    rp = 1.0 + TWO_PI * prm[4] * math.sin(TWO_PI * x)
    psi = x + prm[3]
    fr = rp * (-prm[0] + prm[1] * math.sin(TWO_PI * psi))
    return fr, prm[2], rp, 0.0, 0.0, 1.0


@nb.njit(cache=True)
def linear_fields(r, phi, prm):
    # linearization at r = 0 with constant noise: prm = (lambda, omega)
    return prm[0] * r, prm[1], 1.0, 0.0, 0.0, 1.0


@nb.njit(cache=True)
def double_well_fields(r, phi, prm):
    # -V'(r) for V = r^4/4 - r^2/2: prm = (unused, omega)
    return r - r * r * r, prm[1], 1.0, 0.0, 0.0, 1.0
