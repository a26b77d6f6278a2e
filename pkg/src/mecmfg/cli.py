"""Command-line runner.

    mecmfg <mode> --config <path> [--set key=value]... [--out DIR] [--jobs N] [--seed S]

Modes: aoi, simulate, solve, sweep, validate. Writes ``results.csv`` and
``manifest.json`` (plus ``trace.csv`` when solving and ``simstats.json``
when simulating). Exit status 0 on success, 2 on a config error, 3 when
a solver did not converge (results are still written).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .aoi import (cost_finite, exogenous_rates_finite, exogenous_rates_meanfield,
                  local_power, weighted_aoi)
from .config import ConfigError, Experiment, build, load, set_path
from .des import replicate
from .errors import MecError
from .mfg import deploy, mf_from_policies, solve_mfe

log = logging.getLogger("mecmfg")

COLUMNS = ("sweep_param", "sweep_value", "type_id", "p_r", "p_y", "p_g", "mu0", "rho_r", "rho_y",
           "rho_g", "aoi_r", "aoi_y", "aoi_g", "power", "cost", "converged", "outer_iters", "wall_ms")
TRACE_COLUMNS = ("sweep_value", "iteration", "type_id", "p_r", "p_y", "p_g", "mu0", "rho_r", "rho_y",
                 "rho_g", "cost", "residual")
EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 2, 3


def _row(type_id, policy, rho, aoi, power, cost, converged, iters):
    return {"type_id": type_id, "p_r": policy.p[0], "p_y": policy.p[1], "p_g": policy.p[2],
            "mu0": policy.mu0, "rho_r": rho[0], "rho_y": rho[1], "rho_g": rho[2],
            "aoi_r": aoi[0], "aoi_y": aoi[1], "aoi_g": aoi[2], "power": power, "cost": cost,
            "converged": int(converged), "outer_iters": iters}


def evaluate_aoi(exp: Experiment):
    """Finite-N evaluation of the configured per-type policies."""
    system = exp.system
    ues = deploy(exp.policies, system)
    rho = mf_from_policies(exp.policies, system.profiles, system.es_rate).rho
    rows = []
    for t, (pol, prof) in enumerate(zip(exp.policies, system.profiles)):
        idx = next((i for i, (_, pr) in enumerate(ues) if pr is prof), None)
        if idx is None:
            continue
        br = weighted_aoi(exogenous_rates_finite(ues, idx), pol, prof, system)
        rows.append(_row(t, pol, rho, br.per_class, local_power(pol, prof),
                         cost_finite(ues, idx, system), True, 0))
    return {"rows": rows, "converged": True}


def evaluate_simulate(exp: Experiment):
    system = exp.system
    sim = exp.sim_config()
    rep = replicate(sim, exp.sim["replications"])
    rho = mf_from_policies(exp.policies, system.profiles, system.es_rate).rho
    w = np.array(system.aoi_weights)
    rows = []
    for t, pol in enumerate(exp.policies):
        members = [i for i, j in enumerate(sim.profile_index) if j == t]
        if not members:
            continue
        aoi = rep.mean.aoi[members].mean(axis=0)
        power = float(rep.mean.power[members].mean())
        rows.append(_row(t, pol, rho, tuple(float(a) for a in aoi), power,
                         power + system.V * float(w @ aoi), True, 0))
    stats = {k: np.asarray(v).tolist() for k, v in rep.mean.as_dict().items()}
    stats["stderr"] = {k: np.asarray(v).tolist() for k, v in rep.stderr.items()}
    stats["replications"] = exp.sim["replications"]
    return {"rows": rows, "converged": True, "simstats": stats}


def evaluate_solve(exp: Experiment, init_policies=None, init_rho=None):
    system = exp.system
    res = solve_mfe(system, exp.solver, init_policies or exp.policies, init_rho)
    rows = []
    for t, (pol, prof) in enumerate(zip(res.policies, system.profiles)):
        rates = exogenous_rates_meanfield(res.mean_field, system.num_ues, system.es_rate, pol, prof)
        br = weighted_aoi(rates, pol, prof, system)
        power = local_power(pol, prof)
        rows.append(_row(t, pol, res.mean_field.rho, br.per_class, power,
                         power + system.V * br.weighted, res.converged, res.outer_iterations))
    trace = []
    for e in res.trace:
        for t, (x, c) in enumerate(zip(e.policies, e.costs)):
            trace.append({"iteration": e.iteration, "type_id": t, "p_r": x[0], "p_y": x[1], "p_g": x[2],
                          "mu0": x[3], "rho_r": e.rho[0], "rho_y": e.rho[1], "rho_g": e.rho[2],
                          "cost": c, "residual": e.residual})
    return {"rows": rows, "converged": res.converged, "trace": trace,
            "warm": (res.policies, res.mean_field)}


EVALUATORS = {"aoi": evaluate_aoi, "simulate": evaluate_simulate, "solve": evaluate_solve}


def _timed(fn, *args, **kw):
    start = time.perf_counter()
    try:
        out = fn(*args, **kw)
    except MecError as e:
        log.error("%s: %s", type(e).__name__, e)
        out = {"rows": [], "converged": False, "error": f"{type(e).__name__}: {e}"}
    ms = (time.perf_counter() - start) * 1000.0
    for row in out["rows"]:
        row["wall_ms"] = round(ms, 3)
    return out


def _sweep_point(doc, mode, param, value):
    doc = copy.deepcopy(doc)
    set_path(doc, param, value)
    exp = build(doc, mode)
    return _timed(EVALUATORS[mode], exp)


def run_sweep(exp: Experiment, jobs: int):
    sw = exp.sweep
    mode, param, values = sw["mode"], sw["parameter"], sw["values"]
    results = []
    if mode == "solve" and sw["warm_start"]:
        warm = None
        for v in values:
            doc = copy.deepcopy(exp.resolved)
            set_path(doc, param, v)
            point = build(doc, mode)
            kw = {"init_policies": warm[0], "init_rho": warm[1]} if warm else {}
            out = _timed(evaluate_solve, point, **kw)
            warm = out.get("warm", warm)
            results.append(out)
    elif jobs > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_point, exp.resolved, mode, param, v) for v in values]
            results = [f.result() for f in futures]
    else:
        results = [_sweep_point(exp.resolved, mode, param, v) for v in values]
    rows, trace = [], []
    for v, out in zip(values, results):
        for row in out["rows"]:
            rows.append({"sweep_param": param, "sweep_value": v, **row})
        for t in out.get("trace", []):
            trace.append({"sweep_value": v, **t})
    return {"rows": rows, "trace": trace, "converged": all(o["converged"] for o in results),
            "errors": [o["error"] for o in results if "error" in o]}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def write_outputs(out_dir, exp: Experiment, result, overrides):
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "results.csv"), COLUMNS, result["rows"])
    if result.get("trace"):
        write_csv(os.path.join(out_dir, "trace.csv"), TRACE_COLUMNS, result["trace"])
    if "simstats" in result:
        with open(os.path.join(out_dir, "simstats.json"), "w", encoding="utf-8") as fh:
            json.dump(result["simstats"], fh, indent=2)
    manifest = {
        "schema_version": exp.resolved["schema_version"],
        "mecmfg_version": __version__,
        "mode": exp.mode,
        "seed": {"solver": exp.solver.rng_seed, "sim": exp.sim["rng_seed"]},
        "overrides": list(overrides),
        "converged": result["converged"],
        "errors": result.get("errors", []),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "resolved_config": exp.resolved,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _summary(rows):
    for row in rows:
        prefix = f"{row['sweep_param']}={row['sweep_value']} " if row.get("sweep_param") else ""
        print(f"{prefix}type {row['type_id']}: p=({row['p_r']!r}, {row['p_y']!r}, {row['p_g']!r}) "
              f"mu0={row['mu0']!r} aoi_r={row['aoi_r']!r} aoi_y={row['aoi_y']!r} aoi_g={row['aoi_g']!r} "
              f"power={row['power']!r} cost={row['cost']!r} converged={bool(row['converged'])}")


def parser():
    ap = argparse.ArgumentParser(prog="mecmfg", description=__doc__.split("\n\n")[0])
    ap.add_argument("mode", choices=("aoi", "simulate", "solve", "sweep", "validate"))
    ap.add_argument("--config", required=True, help="JSON config or run manifest")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config value, e.g. system.es_rate=12 (repeatable)")
    ap.add_argument("--out", help="output directory (default: the config's 'output')")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes for sweeps")
    ap.add_argument("--seed", type=int, help="seed for the solver and the simulator")
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("MECMFG_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"solver.rng_seed={args.seed}", f"sim.rng_seed={args.seed}"]
    mode = None if args.mode == "validate" else args.mode
    try:
        exp = load(args.config, overrides, mode)
    except ConfigError as e:
        for d in e.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_CONFIG
    if args.mode == "validate":
        print("valid")
        return EXIT_OK
    if exp.mode == "sweep":
        result = run_sweep(exp, max(1, args.jobs))
    else:
        result = _timed(EVALUATORS[exp.mode], exp)
    out_dir = args.out or exp.resolved["output"]
    write_outputs(out_dir, exp, result, overrides)
    _summary(result["rows"])
    for err in result.get("errors", []) + ([result["error"]] if "error" in result else []):
        print(err, file=sys.stderr)
    if not result["converged"]:
        print("solver did not converge; results flagged in results.csv", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
