"""
Noise-induced phase slips across an unstable periodic orbit.

Submodules
----------
model      planar systems, Floquet constants and the orbit-aligned time theta
dynamics   Euler-Maruyama kernels, first passages and slip detection
laws       limit laws (Gumbel, cycling profile, logistic, ...)
ldp        instanton, quasipotential and the Gamma_s curves
poincare   one-period transition kernel and its principal eigenvalue
stats      goodness-of-fit tests and location fits
harness    experiment drivers with PASS/FAIL checks
"""
from . import dynamics, harness, laws, ldp, model, poincare, stats
from .model import build_from_dict, build_melnikov_system, compute_exponents, orbit_geometry

__version__ = "0.1.0"

__all__ = ["dynamics", "harness", "laws", "ldp", "model", "poincare", "stats",
           "build_from_dict", "build_melnikov_system", "compute_exponents", "orbit_geometry"]
