import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from phaseslip import ldp
from phaseslip.model import build_melnikov_system, compute_exponents, orbit_geometry

TWO_PI = 2 * math.pi


def _setup(eps):
    spec = build_melnikov_system(eps, 1.0)
    c = compute_exponents(spec)
    g = orbit_geometry(spec, c)
    return spec, c, g


@pytest.fixture(scope="module")
def flat():
    spec, c, g = _setup(0.0)
    return spec, c, g, ldp.find_instanton(spec, c, g)


@pytest.fixture(scope="module")
def modulated():
    spec, c, g = _setup(0.2)
    return spec, c, g, ldp.find_instanton(spec, c, g)


def _gamma_flat(s):
    # eps = 0: tan(pi r) grows like e^theta from |r| = delta, so |r| = atan(sqrt(pi)/2 e^s)/pi
    return math.atan(math.sqrt(math.pi) / 2 * math.exp(s)) / math.pi


# ---------------------------------------------------------------------------
# Hamiltonian

@given(st.floats(-1, 1), st.floats(-3, 3), st.floats(-0.45, 0.45))
@settings(max_examples=50)
def test_hamiltonian_vanishes_at_zero_momentum(r, phi, eps):
    spec = build_melnikov_system(eps, 1.3)
    assert ldp.hamiltonian((r, phi), (0.0, 0.0), spec) == 0.0


def test_hamiltonian_value():
    spec = build_melnikov_system(0.0, 1.0)
    assert_allclose(ldp.hamiltonian((0.25, 0.0), (1.0, 0.0), spec), 1.5, rtol=1e-15)


@given(st.floats(-0.5, 0.5), st.floats(0, 1), st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=40)
def test_vector_field_against_analytic(r, phi, pr, pp):
    eps, om = 0.2, 1.0
    spec = build_melnikov_system(eps, om)
    v = ldp.ham_vector_field((r, phi), (pr, pp), spec)
    s, c = math.sin(TWO_PI * r), math.cos(TWO_PI * r)
    cp, sp = math.cos(TWO_PI * phi), math.sin(TWO_PI * phi)
    f = s * (1 + eps * s * cp)
    dfdr = TWO_PI * c * (1 + 2 * eps * s * cp)
    dfdphi = -TWO_PI * eps * s * s * sp
    assert_allclose(v, [pr + f, pp + om, -dfdr * pr, -dfdphi * pr], atol=1e-6)


def test_zero_momentum_plane_invariant():
    spec, _, _ = _setup(0.2)
    traj, _ = ldp.flow(spec, [-0.3, 0.1, 0.0, 0.0], 1e-3, 1000)
    assert np.all(traj[:, 3:] == 0.0)


@pytest.mark.parametrize("eps", [0.0, 0.2])
def test_flow_conserves_energy(eps):
    spec, _, _ = _setup(eps)
    traj, _ = ldp.flow(spec, [-0.3, 0.1, 0.7, -0.2], 1e-3, 1000)
    H = ldp.energy(spec, traj)
    assert traj[-1, 0] == pytest.approx(1.0)
    assert np.max(np.abs(H - H[0])) < 1e-8


def test_flow_backward_inverts_forward():
    spec, _, _ = _setup(0.2)
    y0 = np.array([-0.3, 0.1, 0.7, -0.2])
    fwd, _ = ldp.flow(spec, y0, 1e-3, 500)
    back, _ = ldp.flow(spec, fwd[-1, 1:], -1e-3, 500)
    assert_allclose(back[-1, 1:], y0, atol=1e-10)


def test_flow_needs_compiled_fields():
    from phaseslip.model import SystemSpec
    spec, _, _ = _setup(0.0)
    plain = SystemSpec("plain", {}, spec.f_r, spec.f_phi, spec.g_r, spec.g_phi)
    with pytest.raises(ValueError):
        ldp.flow(plain, [0.1, 0.0, 0.0, 0.0], 1e-3, 10)


# ---------------------------------------------------------------------------
# rate function and momentum integral

def test_rate_function_zero_on_flow_lines():
    spec, _, _ = _setup(0.2)
    traj, _ = ldp.flow(spec, [-0.4, 0.3, 0.0, 0.0], 1e-3, 2000, with_p=False)
    assert ldp.rate_function(traj[:, 0], traj[:, 1], traj[:, 2], spec) < 1e-10


def test_rate_function_straight_line_has_interior_minimum():
    # cost of r: -0.5 -> -0.1 linearly in time T: too fast and too slow are both expensive
    spec, _, _ = _setup(0.0)
    Ts = np.geomspace(0.05, 20, 30)
    cost = []
    for T in Ts:
        t = np.linspace(0, T, 4001)
        cost.append(ldp.rate_function(t, -0.5 + 0.4 * t / T, t, spec))
    k = int(np.argmin(cost))
    assert 0 < k < len(Ts) - 1


def test_rate_function_translation_invariant():
    spec, _, _ = _setup(0.2)
    t = np.linspace(0, 2, 2001)
    r = -0.5 + 0.3 * np.sin(t) ** 2
    phi = 0.1 + t
    assert_allclose(ldp.rate_function(t, r, phi + 1, spec), ldp.rate_function(t, r, phi, spec),
                    rtol=1e-12)


def test_momentum_integral_two_rules_agree(modulated):
    spec, _, _, inst = modulated
    traj = np.column_stack([inst.t, inst.r, inst.phi, inst.p_r, inst.p_phi])
    assert_allclose(ldp.momentum_integral(traj, spec), ldp.momentum_integral(traj), atol=1e-6)


# ---------------------------------------------------------------------------
# fibers

def test_periodic_linear_solution():
    om = TWO_PI
    phi, y = ldp.periodic_linear_solution(lambda p: -1.0, lambda p: math.cos(om * p), n=2048)
    exact = (np.cos(om * phi) + om * np.sin(om * phi)) / (1 + om ** 2)
    assert_allclose(y, exact, atol=1e-12)


def test_orbit_fibers_flat():
    spec, _, _ = _setup(0.0)
    assert_allclose(ldp.orbit_fiber(spec, -0.5).u, 1 / (4 * math.pi), rtol=1e-10)
    assert_allclose(ldp.orbit_fiber(spec, 0.0).u, -1 / (4 * math.pi), rtol=1e-10)


# ---------------------------------------------------------------------------
# instanton

def test_instanton_flat_momentum(flat):
    spec, _, _, inst = flat
    assert inst.degenerate
    assert np.max(np.abs(inst.p_r + 2 * np.sin(TWO_PI * inst.r))) < 1e-5
    assert np.max(np.abs(inst.p_phi)) < 1e-5


def test_instanton_flat_action(flat):
    inst = flat[3]
    assert abs(inst.action - 2 / math.pi) < 1e-5


@pytest.mark.parametrize("which", ["flat", "modulated"])
def test_instanton_invariants(which, request):
    spec, _, _, inst = request.getfixturevalue(which)
    assert inst.max_energy < 1e-6
    assert abs(inst.action - inst.action_lagrangian) < 1e-5
    assert inst.r[0] == pytest.approx(-0.5 + ldp.DELTA_INIT, abs=1e-12)
    assert -ldp.DELTA_END * 1.01 < inst.r[-1] < 0
    assert np.all(np.diff(inst.t) > 0)


def test_instanton_modulated_lowers_action(modulated):
    inst = modulated[3]
    assert not inst.degenerate
    assert inst.action < 2 / math.pi
    alphas, miss = inst.miss_curve
    assert np.any(miss > 0) and np.any(miss < 0)


def test_instanton_translation(modulated):
    spec, _, _, inst = modulated
    traj = np.column_stack([inst.t, inst.r, inst.phi, inst.p_r, inst.p_phi])
    shifted = traj.copy()
    shifted[:, 2] += 1.0
    assert_allclose(ldp.momentum_integral(shifted, spec), ldp.momentum_integral(traj, spec),
                    rtol=1e-13)
    assert_allclose(ldp.rate_function(inst.t[:100], inst.r[:100], inst.phi[:100] + 1, spec),
                    ldp.rate_function(inst.t[:100], inst.r[:100], inst.phi[:100], spec),
                    rtol=1e-12)


def test_s_star_table(modulated):
    inst = modulated[3]
    d, s = inst.s_star_table.T
    assert np.all((0 <= s) & (s < 1))
    assert_allclose(inst.s_star(d[10]), s[10], atol=1e-12)
    with pytest.raises(ValueError):
        inst.s_star(0.6)


def test_tail_constant_finite(modulated):
    spec, c, g, inst = modulated
    assert np.isfinite(inst.tail_constant) and inst.tail_constant > 0
    assert np.isfinite(ldp.crossing_location(g, inst))


def test_attach_instanton(modulated):
    spec, c, g, inst = modulated
    g2 = ldp.attach_instanton(orbit_geometry(spec, c), inst)
    assert g2.s_star(0.01) == inst.s_star(0.01)


# ---------------------------------------------------------------------------
# quasipotential and level profile

def test_quasipotential_flat(flat):
    spec, c, g, inst = flat
    V = ldp.quasipotential_on_boundary(spec, np.arange(8) / 8, inst, c, g)
    assert_allclose(V, 2 / math.pi, atol=1e-5)


def test_quasipotential_constant_modulated(modulated):
    spec, c, g, inst = modulated
    V = ldp.quasipotential_on_boundary(spec, np.arange(8) / 8, inst, c, g)
    assert np.ptp(V) < 1e-4
    assert np.all(V > 0)


def test_action_starts_at_zero_on_attractor(modulated):
    spec, _, _, inst = modulated
    traj = np.column_stack([inst.t, inst.r, inst.phi, inst.p_r, inst.p_phi])
    cum = ldp.momentum_integral(traj, spec, cumulative=True)
    assert abs(cum[0]) < 1e-12
    assert np.all(cum >= -1e-10)


def test_level_action_profile_unique_maximum():
    spec = build_melnikov_system(0.05, 1.0)
    grid, cost = ldp.level_action_profile(spec, 0.05)
    assert grid.size == cost.size == 256
    assert np.all(np.isfinite(cost))
    assert ldp.periodic_extrema(cost) == (1, 1)


def test_level_action_profile_flat():
    spec = build_melnikov_system(0.0, 1.0)
    _, cost = ldp.level_action_profile(spec, 0.05, n_alpha=64)
    # the constant value is the cost of -1/2 -> -0.05 along -2 sin(2 pi r)
    exact = (1 + math.cos(TWO_PI * 0.05)) / math.pi
    assert_allclose(cost, exact, atol=1e-5)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_periodic_extrema_counts(k):
    x = np.arange(360) / 360
    assert ldp.periodic_extrema(np.cos(TWO_PI * k * x)) == (k, k)


def test_periodic_extrema_hysteresis():
    x = np.arange(400) / 400
    v = np.cos(TWO_PI * x) + 1e-2 * np.cos(TWO_PI * 40 * x)
    assert ldp.periodic_extrema(v, tol=0.05) == (1, 1)
    assert ldp.periodic_extrema(v)[0] > 1


# ---------------------------------------------------------------------------
# Gamma curves

@pytest.mark.parametrize("s", [-1.0, 0.0, 1.0])
def test_gamma_flat_closed_form(s):
    spec, _, g = _setup(0.0)
    pair = ldp.gamma_s_curves(spec, g, s, check=False, n=64)
    assert_allclose(pair.plus.r, _gamma_flat(s), atol=1e-5)
    assert_allclose(pair.minus.r, -_gamma_flat(s), atol=1e-5)


def test_gamma_small_s_linear_zone():
    spec, c, g = _setup(0.2)
    s = -6.0
    curve = ldp.gamma_s_curve(spec, g, s, +1, delta=1e-5, n=64)
    # s is offset by log(2 lambda_+)/2 so that the exit law is exactly Theta + s
    lin = math.exp(s) * np.sqrt(c.T_plus * g.h_per(curve.phi))
    assert_allclose(curve.r, lin, rtol=5e-3)


def test_gamma_refinement_and_order():
    spec, _, g = _setup(0.2)
    lo = ldp.gamma_s_curves(spec, g, -0.5, n=128)
    hi = ldp.gamma_s_curves(spec, g, 0.5, n=128)
    assert lo.refinement_gap < 1e-4 and hi.refinement_gap < 1e-4
    assert np.all(lo.plus.r < hi.plus.r)
    assert np.all(lo.minus.r > hi.minus.r)
    assert np.all((-0.5 < hi.minus.r) & (hi.minus.r < 0) & (0 < hi.plus.r) & (hi.plus.r < 0.5))


def test_gamma_large_s_reaches_orbit():
    spec, _, g = _setup(0.2)
    curve = ldp.gamma_s_curve(spec, g, 7.0, +1, n=64)
    assert np.max(np.abs(curve.r - 0.5)) < 1e-3


def test_gamma_side_validated():
    spec, _, g = _setup(0.0)
    with pytest.raises(ValueError):
        ldp.gamma_s_curve(spec, g, 0.0, 0)
    with pytest.raises(ValueError):
        ldp.gamma_s_curve(spec, g, -12.0, +1, delta=1e-3)


# ---------------------------------------------------------------------------
# export

def test_export(tmp_path, modulated):
    spec, _, g, inst = modulated
    files = ldp.export_instanton(inst, tmp_path / "inst")
    tab = np.loadtxt(files["csv"], delimiter=",", skiprows=1)
    assert_allclose(tab, inst.table())
    assert json.loads(open(files["json"]).read())["action"] == pytest.approx(inst.action)
    curve = ldp.gamma_s_curve(spec, g, 0.0, -1, n=32)
    p = ldp.export_gamma(curve, tmp_path / "g.csv")
    assert_allclose(np.loadtxt(p, delimiter=",", skiprows=1), curve.table())
