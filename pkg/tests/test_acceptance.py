"""Acceptance suite.

Each criterion runs at full size and prints one ``PASS``/``FAIL`` line, preceded by
the individual check lines it is built from. Checks that an experiment reports but
the criterion does not gate on are printed with a ``(supplementary)`` tag.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
The summary is also written to ``acceptance_summary.txt`` next to this directory's parent.
The full file takes about 10 minutes on one core.
"""
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from phaseslip import harness, laws, ldp
from phaseslip.model import build_melnikov_system, compute_exponents, orbit_geometry

pytestmark = pytest.mark.acceptance

LOG2 = math.log(2.0)
SUMMARY = Path(__file__).resolve().parent.parent / "acceptance_summary.txt"
_LINES: dict[str, list[str]] = {}
_CAPTURE = None


@pytest.fixture(autouse=True)
def _uncaptured(capsys):
    # criterion lines bypass output capture so they show in a plain -v run
    global _CAPTURE
    _CAPTURE = capsys
    yield
    _CAPTURE = None


def _emit(label: str, title: str, items: list[tuple[str, bool]], elapsed: float,
          extra: list[str] = ()) -> bool:
    """Print check lines and the criterion line; returns the verdict."""
    ok = bool(items) and all(p for _, p in items)
    lines = [f"  {'PASS' if p else 'FAIL'} {text}" for text, p in items]
    lines += [f"  {s} (supplementary)" for s in extra]
    lines.append(f"{'PASS' if ok else 'FAIL'} {label}: {title} [{elapsed:.0f} s]")
    _LINES[label] = lines
    out = "\n".join(lines)
    if _CAPTURE is None:
        print(out, flush=True)
    else:
        with _CAPTURE.disabled():
            print("\n" + out, flush=True)
    SUMMARY.write_text("\n".join(l for k in sorted(_LINES) for l in _LINES[k]) + "\n")
    return ok


def _gate(rep: harness.ExperimentReport, names) -> tuple[list[tuple[str, bool]], list[str]]:
    """Split report lines into gating checks and supplementary ones."""
    names = list(names)
    items, extra = [], []
    for c, line in zip(rep.checks, rep.lines()):
        if c.name in names:
            items.append((line.split(" ", 1)[1], c.passed))
        else:
            extra.append(line)
    missing = set(names) - {c.name for c in rep.checks}
    items += [(f"{rep.experiment}.{m}: missing", False) for m in sorted(missing)]
    return items, extra


# ---------------------------------------------------------------------------

def test_criterion_1_closed_form_identities():
    t0 = time.perf_counter()
    items = []
    x = np.linspace(-3.0, 12.0, 3001)
    err = np.max(np.abs(laws.gumbel_cdf(x) ** 2 - laws.gumbel_cdf(x - LOG2)))
    items.append((f"gumbel max-stability max error {err:.2e} < 1e-12", err < 1e-12))
    y = x[x > -2]
    err = np.max(np.abs(laws.gumbel_cdf(np.exp(-y)) - np.exp(-laws.gumbel_cdf(y))))
    items.append((f"gumbel self-map max error {err:.2e} < 1e-12", err < 1e-12))
    val = sum(integrate.quad(laws.a_density, a, b, epsabs=1e-15, limit=400)[0]
              for a, b in [(-np.inf, 0.0), (0.0, np.inf)])
    items.append((f"integral of A = 1 error {abs(val - 1):.2e} < 1e-8", abs(val - 1) < 1e-8))
    for L in (1.0, 2 * math.pi, 10.0):
        val, _ = integrate.quad(lambda u: laws.cycling_profile_sum(u, L), 0, 1, epsabs=1e-13,
                                epsrel=1e-13, limit=200)
        e = abs(val - 1 / L)
        items.append((f"integral of Q = 1/lambdaT at {L:.4g} error {e:.2e} < 1e-8", e < 1e-8))
        u = np.arange(512) / 512
        e = np.max(np.abs(laws.cycling_profile_sum(u, L) - laws.cycling_profile_fourier(u, L, 64)))
        items.append((f"Q sum vs Fourier at {L:.4g} error {e:.2e} < 1e-8", e < 1e-8))
        z = np.linspace(0, 1, 65)
        e = np.max(np.abs(laws.cycling_profile_sum(z + 1j * math.pi / L, L)
                          - laws.cycling_profile_sum(z, L)))
        items.append((f"Q elliptic period at {L:.4g} error {e:.2e} < 1e-8", e < 1e-8))
    assert _emit("criterion 1", "closed-form identities", items, time.perf_counter() - t0)


def test_criterion_2_duplication():
    t0 = time.perf_counter()
    rep = laws.duplication_identity_check(10**6, np.random.default_rng(20))
    items = [(f"two-sample KS {rep.statistic:.5f} < 1% critical {rep.threshold:.5f}",
              rep.statistic < rep.threshold),
             (f"characteristic function error {rep.extra['cf_max_error']:.2e} < 1e-6",
              rep.extra["cf_max_error"] < 1e-6)]
    assert _emit("criterion 2", "duplication identity", items, time.perf_counter() - t0)


def test_criterion_3_instanton():
    t0 = time.perf_counter()
    spec = build_melnikov_system(0.0, 1.0)
    c = compute_exponents(spec)
    g = orbit_geometry(spec, c)
    inst = ldp.find_instanton(spec, c, g)
    e_pr = np.max(np.abs(inst.p_r + 2 * np.sin(2 * math.pi * inst.r)))
    e_pp = np.max(np.abs(inst.p_phi))
    e_act = abs(inst.action - 2 / math.pi)
    V = ldp.quasipotential_on_boundary(spec, np.arange(16) / 16, inst, c, g)
    spread = float(np.ptp(V))
    e_v = float(np.max(np.abs(V - 2 / math.pi)))
    items = [(f"p_r + 2 sin(2 pi r) max {e_pr:.2e} < 1e-5", e_pr < 1e-5),
             (f"p_phi max {e_pp:.2e} < 1e-5", e_pp < 1e-5),
             (f"action - 2/pi {e_act:.2e} < 1e-5", e_act < 1e-5),
             (f"quasipotential spread on orbit {spread:.2e} < 1e-4", spread < 1e-4),
             (f"quasipotential - 2/pi {e_v:.2e} < 1e-4", e_v < 1e-4)]
    assert _emit("criterion 3", "instanton oracle", items, time.perf_counter() - t0)


@pytest.mark.parametrize("exp_id", ["linear_exit_up", "linear_hit_zero"])
def test_criterion_4_linear_exit_laws(exp_id):
    t0 = time.perf_counter()
    rep = harness.run_experiment(exp_id)
    items, extra = _gate(rep, ["ks_final", "ks_monotone"])
    assert _emit(f"criterion 4{'a' if exp_id == 'linear_exit_up' else 'b'}",
                 f"linear exit laws ({exp_id})", items, time.perf_counter() - t0, extra)


def test_criterion_5_reactive_path():
    t0 = time.perf_counter()
    rep = harness.exp_reactive_path_1d()
    items, extra = _gate(rep, ["ks_final", "ks_monotone", "eyring_kramers_mean",
                               "exponential_law"])
    assert _emit("criterion 5", "reactive-path law", items, time.perf_counter() - t0, extra)


def test_criterion_6_crossing_phase():
    t0 = time.perf_counter()
    rep = harness.exp_crossing_phase()
    items, extra = _gate(rep, ["kuiper_final", "kuiper_monotone", "scale_invariance",
                               "period_ratio_vs_kernel"])
    assert _emit("criterion 6", "crossing-phase law", items, time.perf_counter() - t0, extra)


def test_criterion_7_spectral():
    t0 = time.perf_counter()
    rep = harness.exp_spectral()
    items, extra = _gate(rep, ["grid_refinement", "survival_consistency", "log_rate_trend"])
    assert _emit("criterion 7", "spectral consistency", items, time.perf_counter() - t0, extra)


def test_criterion_8_duration_laws():
    t0 = time.perf_counter()
    rep = harness.exp_slip_duration()
    names = [c.name for c in rep.checks
             if c.name.startswith("ks_") and c.name.endswith("_final")]
    names += ["s_shift_first", "s_shift_second", "s_shift_sum", "duration_log_sigma_shift"]
    items, extra = _gate(rep, names)
    nb = harness.exp_exit_neighborhood()
    i2, e2 = _gate(nb, ["ks_final", "delta_halving_shift"])
    assert _emit("criterion 8", "duration and exit-neighborhood laws", items + i2,
                 time.perf_counter() - t0, extra + e2)


def test_criterion_9_reproducibility():
    t0 = time.perf_counter()
    items = []
    with tempfile.TemporaryDirectory() as tmp:
        for exp_id, params in [("linear_hit_zero", {"n": 5000}),
                               ("exit_neighborhood", {"sigmas": (0.04, 0.02), "n": 600}),
                               ("slip_duration", {"sigmas": (0.04,), "n": 300})]:
            c = harness.reproducibility_check(exp_id, params, 99, tmp, parallelism=(1, 2, 4))
            items.append((f"{c.name}: records identical at parallelism 1, 2, 4", c.passed))
    assert _emit("criterion 9", "reproducibility", items, time.perf_counter() - t0)


def test_supplementary_residence_times():
    # not a numbered criterion; the residence experiment is reported for completeness
    t0 = time.perf_counter()
    rep = harness.exp_residence_times()
    items, extra = _gate(rep, [c.name for c in rep.checks])
    assert _emit("supplementary", "residence times", items,
                 time.perf_counter() - t0, extra)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
