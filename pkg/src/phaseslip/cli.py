"""
Command-line entry point: ``phaseslip <command> [options]``.

Commands
--------
validate   structural invariants of a system
instanton  zero-energy connection, written as CSV/JSON
kernel     one-period transition kernel and its principal eigenvalue
simulate   first passages from the stable orbit to r = 0 or r = -1
exp ID     one experiment driver, persisted under ``--out``
laws       pdf/cdf table of a limit law

A ``--config`` TOML file may carry a ``[system]`` table, top-level
``sigma``/``n``/``seed``/``out`` keys and a ``[params]`` table of extra
keyword arguments; its values take precedence over the flags. The exit
code is 0 iff every check of the run passed.
"""
from __future__ import annotations

import argparse
import inspect
import json
import sys
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import harness, ldp, poincare, stats
from .laws import FAMILIES, TheoreticalLaw, law_table
from .model import build_from_dict, compute_exponents, load_config, orbit_geometry, validate_spec


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--sigma", type=float, nargs="+", help="noise level(s)")
    common.add_argument("--n", type=int, help="replicates (or slips / starts per cell)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", type=Path, default=Path("runs"), help="output directory")
    common.add_argument("--config", type=Path, help="TOML file; overrides the flags")
    common.add_argument("--system", default="melnikov",
                        help="system builder (melnikov, washboard, linear, double_well)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="builder or experiment parameter, repeatable")

    p = argparse.ArgumentParser(prog="phaseslip", description=__doc__.split("\n")[1])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check model invariants")
    sub.add_parser("instanton", parents=[common], help="compute the instanton")
    k = sub.add_parser("kernel", parents=[common], help="estimate the Poincare kernel")
    k.add_argument("--m", type=int, default=64, help="number of cells")
    sub.add_parser("simulate", parents=[common], help="first passages from the stable orbit")
    e = sub.add_parser("exp", parents=[common], help="run an experiment")
    e.add_argument("id", choices=sorted(harness.EXPERIMENTS))
    e.add_argument("--parallelism", type=int, default=1)
    lw = sub.add_parser("laws", parents=[common], help="tabulate a limit law")
    lw.add_argument("family", choices=FAMILIES)
    lw.add_argument("--grid", type=float, nargs=3, default=(-3.0, 8.0, 111),
                    metavar=("LO", "HI", "NUM"))
    return p


def _settings(args) -> dict:
    """Merge flags, ``--set`` pairs and the config file (highest priority)."""
    from .model import parse_value
    s = {"sigma": args.sigma, "n": args.n, "seed": args.seed, "out": args.out,
         "system": {"builder": args.system}, "params": {}}
    for item in args.set:
        key, _, val = item.partition("=")
        s["params"][key.strip()] = parse_value(val.strip())
    if args.config:
        cfg = load_config(args.config)
        for key in ("sigma", "n", "seed", "out"):
            if key in cfg:
                s[key] = cfg[key]
        if "system" in cfg:
            s["system"] = dict(cfg["system"])
        s["params"].update(cfg.get("params", {}))
    if isinstance(s["sigma"], (int, float)):
        s["sigma"] = [float(s["sigma"])]
    s["out"] = Path(s["out"])
    return s


def _system(s: dict):
    d = dict(s["system"])
    builder_keys = {"eps", "omega", "nu", "lam"}
    for key in list(s["params"]):
        if key in builder_keys:
            d[key] = s["params"].pop(key)
    return build_from_dict(d)


def _emit(obj, ok: bool) -> int:
    print(stats.to_json(obj, indent=2))
    return 0 if ok else 1


def cmd_validate(s) -> int:
    spec = _system(s)
    rep = validate_spec(spec)
    out = {"system": spec.describe(), "checks": rep.checks, "c1": rep.c1, "c2": rep.c2,
           "min_f_phi": rep.min_f_phi, "max_orbit_drift": rep.max_orbit_drift}
    if spec.periodic:
        c = compute_exponents(spec)
        out.update(lambda_plus=c.lambda_plus, lambda_minus=c.lambda_minus, T_plus=c.T_plus)
    return _emit(out, rep.passed)


def cmd_instanton(s) -> int:
    spec = _system(s)
    constants = compute_exponents(spec)
    geo = orbit_geometry(spec, constants)
    inst = ldp.find_instanton(spec, constants, geo)
    d = s["out"] / f"instanton_{spec.name}"
    files = ldp.export_instanton(inst, d)
    ok = bool(np.isfinite(inst.action) and inst.max_energy < 1e-6)
    return _emit({"system": spec.describe(), **inst.summary(), "files": files}, ok)


def cmd_kernel(s, m: int) -> int:
    spec = _system(s)
    sigma = (s["sigma"] or [0.35])[0]
    seed = s["seed"] if s["seed"] is not None else 0
    est = poincare.estimate_kernel(spec, sigma, m, s["n"] or 1000, seed,
                                   dt=s["params"].get("dt"))
    sp = poincare.bootstrap_lambda(est, n_boot=int(s["params"].get("n_boot", 200)), seed=seed)
    files = poincare.export_kernel(est, sp, s["out"] / f"kernel_{spec.name}_s{sigma:g}")
    return _emit({"system": spec.describe(), "sigma": sigma, **sp.summary(), "files": files},
                 sp.converged and not est.flagged())


def cmd_simulate(s) -> int:
    spec = _system(s)
    sigma = (s["sigma"] or [0.35])[0]
    seed = s["seed"] if s["seed"] is not None else 0
    n = s["n"] or 100
    cfg = dyn.SimConfig.for_spec(spec, sigma, seed=seed,
                                 max_time=float(s["params"].get("max_time", 1e4)),
                                 **({"dt": s["params"]["dt"]} if "dt" in s["params"] else {}))
    prob = dyn.PassageProblem(spec, cfg, (-0.5, 0.0),
                              (dyn.Boundary.flat(0.0, +1, "r=0"),
                               dyn.Boundary.flat(-1.0, -1, "r=-1")))
    res = dyn.passage_batch(prob, n, seed, int(s["params"].get("parallelism", 1)))
    d = s["out"] / f"simulate_{spec.name}_seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    path = dyn.export_records_csv(res.records, d / "records.csv", seed,
                                  meta={"system": spec.describe(), "sigma": sigma, "dt": cfg.dt})
    killed = sum(r.killed for r in res.records)
    return _emit({"records": str(path), "n": n, "killed": killed,
                  "failures": [f.message for f in res.failures]}, res.n_failures == 0)


def cmd_exp(s, exp_id: str, parallelism: int) -> int:
    fn = harness.EXPERIMENTS[exp_id]
    sig = inspect.signature(fn).parameters
    kw = dict(s["params"])
    if s["sigma"]:
        if "sigmas" in sig:
            kw["sigmas"] = tuple(s["sigma"])
        else:
            kw["sigma"] = s["sigma"][0]
    if s["n"]:
        for name in ("n", "n_slips", "n_per_cell"):
            if name in sig:
                kw[name] = s["n"]
                break
    if s["seed"] is not None:
        kw["seed"] = s["seed"]
    if "parallelism" in sig:
        kw["parallelism"] = parallelism
    if "eps" in sig and "eps" in s["system"]:
        kw.setdefault("eps", s["system"]["eps"])
    rep = fn(**kw)
    d = harness.save_run(rep, s["out"])
    for line in rep.lines():
        print(line)
    print(json.dumps({"run_dir": str(d), "passed": rep.passed, "partial": rep.partial,
                      "runtime": rep.runtime}))
    return 0 if rep.passed else 1


def cmd_laws(s, family: str, grid) -> int:
    p = s["params"]
    ctor = {"Gumbel": lambda: TheoreticalLaw.gumbel(p.get("loc", 0.0), p.get("scale", 1.0)),
            "HalfGumbel": lambda: TheoreticalLaw.half_gumbel(p.get("loc", 0.0)),
            "ThetaLaw": lambda: TheoreticalLaw.theta(p.get("loc", 0.0)),
            "Logistic": lambda: TheoreticalLaw.logistic(p.get("loc", 0.0), p.get("scale", 1.0)),
            "CyclingProfile": lambda: TheoreticalLaw.cycling(p.get("lambdaT", 2 * np.pi),
                                                             p.get("loc", 0.0)),
            "AsympGeometric": lambda: TheoreticalLaw.geometric(p.get("p", 0.5)),
            "Exponential": lambda: TheoreticalLaw.exponential(p.get("rate", 1.0))}
    law = ctor[family]()
    x = np.linspace(grid[0], grid[1], int(grid[2]))
    tab = law_table(law, x)
    s["out"].mkdir(parents=True, exist_ok=True)
    path = s["out"] / f"law_{family}.csv"
    np.savetxt(path, tab, delimiter=",", header="x,pdf,cdf", comments="", fmt="%.17g")
    ok = bool(np.all(np.isfinite(tab)))
    return _emit({"law": law.to_dict(), "table": str(path)}, ok)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    s = _settings(args)
    if args.command == "validate":
        return cmd_validate(s)
    if args.command == "instanton":
        return cmd_instanton(s)
    if args.command == "kernel":
        return cmd_kernel(s, args.m)
    if args.command == "simulate":
        return cmd_simulate(s)
    if args.command == "exp":
        return cmd_exp(s, args.id, args.parallelism)
    return cmd_laws(s, args.family, args.grid)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
