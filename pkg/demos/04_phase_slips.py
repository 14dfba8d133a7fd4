"""
Phase slips
===========

Noise drives the sine-modulated system from its stable orbit r = -1/2
across the unstable orbit r = 0. The phase at which that happens, read on
the orbit-aligned scale and reduced modulo one period of the unstable
exponent, follows the cycling profile. The number of whole periods before
escape is asymptotically geometric with ratio given by the principal
eigenvalue of the one-period transition kernel.
"""
import math

import numpy as np

from phaseslip import harness, laws, ldp, poincare, stats
from phaseslip.model import build_melnikov_system, compute_exponents, orbit_geometry

sigma = 0.4
spec = build_melnikov_system(0.05, 1.0)
c = compute_exponents(spec)
g = orbit_geometry(spec, c)
inst = ldp.find_instanton(spec, c, g)
ldp.attach_instanton(g, inst)
L = c.lambdaT
law = harness.cycling_law(g, inst)
print(f"lambda_+ T_+ = {L:.6f}, cycling law {law.to_dict()}")

# first crossings of r = 0 (or the next stable orbit r = -1)
ph, lab, lost = poincare.harvest_crossings(spec, sigma, 1500, seed=1, constants=c, dt=1e-3)
ph0 = ph[lab == "r=0"]
mod = np.mod(g.theta(ph0) - abs(math.log(sigma)), L)
ku = stats.kuiper_test_circular(mod, L, law.cdf)
print(f"{ph0.size} crossings of r = 0, {lost} lost; Kuiper {ku.statistic:.4f} "
      f"(5% critical {stats.kuiper_critical(0.05, mod.size):.4f})")
# at this noise level the phase selection is washed out: sigma^2 = 0.16 dwarfs the
# action gap between phases, so the sample is close to uniform on [0, 1)
print("crossing phase mod 1, decile counts:", np.histogram(np.mod(ph0, 1), 10, (0, 1))[0])

# one-period kernel on the section phi = 0
est = poincare.estimate_kernel(spec, sigma, 32, 1000, seed=2, constants=c, dt=1e-3)
sp = poincare.bootstrap_lambda(est, n_boot=100, seed=3)
print(f"lambda_0 = {sp.lambda0:.4f}, 95% CI [{sp.ci[0]:.4f}, {sp.ci[1]:.4f}]")

# the hazard of the whole-period count against 1 - lambda_0
fit = laws.asymp_geometric_tail_fit(np.floor(ph).astype(int), rng=np.random.default_rng(4))
print(f"tail hazard {fit.p:.4f}, 95% CI [{fit.ci[0]:.4f}, {fit.ci[1]:.4f}]; "
      f"1 - lambda_0 = {1 - sp.lambda0:.4f}")
