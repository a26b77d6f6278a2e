"""Declarative experiment configuration.

A config is a JSON document with ``schema_version`` 1. Per-class values
may be given as ``{"red": .., "yellow": .., "green": ..}`` or as a
three-element list. Every value can be overridden from the command line
with ``key.path[i]=json-value``. A run manifest (which nests the resolved
config under ``resolved_config``) is accepted wherever a config is.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass

from .aoi import CLASSES, Policy, SystemConfig, UEProfile
from .des import NUM_BATCHES, SimConfig
from .mfg import SolverSettings

SCHEMA_VERSION = 1
MODES = ("aoi", "simulate", "solve", "sweep")
CLASS_KEYS = tuple(a.name.lower() for a in CLASSES)

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "mode": "solve",
    "system": {
        "num_ues": 10,
        "es_rate": 10.0,
        "V": 10.0,
        "aoi_weights": {"red": 20.0, "yellow": 5.0, "green": 2.0},
        "profiles": [{"arrival_rates": {"red": 1.0, "yellow": 3.0, "green": 6.0},
                      "eta": 1.0, "f_max": 2.0, "weight": 1.0}],
    },
    "policies": [{"p": {"red": 0.6, "yellow": 0.5, "green": 0.6}, "mu0": 0.7}],
    "solver": {"eps_rho": 1e-6, "eps_policy": 1e-6, "gamma_mf": 0.5, "gamma_step": 1e-2,
               "fd_step": 1e-5, "max_outer": 500, "max_inner": 200, "rng_seed": 0},
    "sim": {"events": 1000000, "horizon": None, "warmup_fraction": 0.1, "rng_seed": 0,
            "replications": 1, "batches": NUM_BATCHES},
    "sweep": None,
    "output": "results",
}
PROFILE_DEFAULTS = DEFAULTS["system"]["profiles"][0]
SWEEP_DEFAULTS = {"parameter": None, "values": [], "mode": "solve", "warm_start": True}


class ConfigError(Exception):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


@dataclass(frozen=True)
class Experiment:
    mode: str
    system: SystemConfig
    policies: tuple  # one Policy per profile
    solver: SolverSettings
    sim: dict
    sweep: dict | None
    resolved: dict

    def sim_config(self, system: SystemConfig | None = None, policies=None) -> SimConfig:
        from .mfg import deploy
        system = system or self.system
        ues = deploy(policies or self.policies, system)
        index = tuple(next(j for j, pr in enumerate(system.profiles) if pr is prof) for _, prof in ues)
        s = self.sim
        return SimConfig(system, tuple(pol for pol, _ in ues), index, horizon=s["horizon"],
                         events=s["events"], warmup_fraction=s["warmup_fraction"],
                         rng_seed=s["rng_seed"], batches=s["batches"])


_TOKEN = re.compile(r"([^.\[\]]+)|\[(\d+)\]")


def split_path(path: str) -> list:
    parts, pos = [], 0
    for m in _TOKEN.finditer(path):
        if m.start() != pos and path[pos:m.start()] != ".":
            raise ValueError(f"malformed path {path!r}")
        parts.append(m.group(1) if m.group(1) is not None else int(m.group(2)))
        pos = m.end()
    if pos != len(path) or not parts:
        raise ValueError(f"malformed path {path!r}")
    return parts


def get_path(doc, path: str):
    node = doc
    for part in split_path(path):
        if isinstance(part, int):
            if not isinstance(node, list) or part >= len(node):
                raise KeyError(path)
        elif not isinstance(node, dict) or part not in node:
            raise KeyError(path)
        node = node[part]
    return node


def set_path(doc, path: str, value):
    parts = split_path(path)
    node = doc
    for part in parts[:-1]:
        if isinstance(part, int):
            node = node[part]
        else:
            if node.get(part) is None:
                node[part] = {}
            node = node[part]
    node[parts[-1]] = value


def parse_override(text: str):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ValueError(f"override {text!r} is not key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _classes(value):
    if isinstance(value, (list, tuple)) and len(value) == 3:
        return dict(zip(CLASS_KEYS, value))
    return value


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def normalize(raw: dict) -> dict:
    """Fill defaults and turn per-class lists into class-keyed dicts."""
    doc = _merge(DEFAULTS, raw)
    sysd = doc["system"]
    sysd["aoi_weights"] = _classes(sysd.get("aoi_weights"))
    if isinstance(sysd.get("profiles"), list):
        sysd["profiles"] = [_merge(PROFILE_DEFAULTS, p) if isinstance(p, dict) else p for p in sysd["profiles"]]
        for p in sysd["profiles"]:
            if isinstance(p, dict):
                p["arrival_rates"] = _classes(p.get("arrival_rates"))
    if isinstance(doc.get("policies"), list):
        for p in doc["policies"]:
            if isinstance(p, dict):
                p["p"] = _classes(p.get("p"))
    if "horizon" in raw.get("sim", {}) and raw["sim"]["horizon"] is not None and "events" not in raw.get("sim", {}):
        doc["sim"]["events"] = None
    if isinstance(doc.get("sweep"), dict):
        doc["sweep"] = _merge(SWEEP_DEFAULTS, doc["sweep"])
    return doc


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _check_keys(node, allowed, where, out):
    for k in node:
        if k not in allowed:
            out.append(f"{where}.{k}: unknown key" if where else f"{k}: unknown key")


def _class_values(node, where, out):
    if not isinstance(node, dict):
        out.append(f"{where}: expected an object with keys red/yellow/green or a 3-element list")
        return None
    _check_keys(node, CLASS_KEYS, where, out)
    vals = []
    for k in CLASS_KEYS:
        v = node.get(k)
        if not _num(v):
            out.append(f"{where}.{k}: expected a number, got {v!r}")
            return None
        vals.append(float(v))
    return tuple(vals)


def _build_system(d, out):
    where = "system"
    if not isinstance(d, dict):
        out.append("system: expected an object")
        return None
    _check_keys(d, DEFAULTS["system"], where, out)
    ok = True
    for k in ("num_ues", "es_rate", "V"):
        if not _num(d.get(k)):
            out.append(f"system.{k}: expected a number, got {d.get(k)!r}")
            ok = False
    if _num(d.get("num_ues")) and not _int(d["num_ues"]):
        out.append(f"system.num_ues: must be an integer, got {d['num_ues']!r}")
        ok = False
    weights = _class_values(d.get("aoi_weights"), "system.aoi_weights", out)
    profiles = []
    if not isinstance(d.get("profiles"), list):
        out.append("system.profiles: expected a list")
        ok = False
    else:
        for i, p in enumerate(d["profiles"]):
            pw = f"system.profiles[{i}]"
            if not isinstance(p, dict):
                out.append(f"{pw}: expected an object")
                ok = False
                continue
            _check_keys(p, PROFILE_DEFAULTS, pw, out)
            rates = _class_values(p.get("arrival_rates"), f"{pw}.arrival_rates", out)
            bad = [k for k in ("eta", "f_max", "weight") if not _num(p.get(k))]
            for k in bad:
                out.append(f"{pw}.{k}: expected a number, got {p.get(k)!r}")
            if rates is None or bad:
                ok = False
                continue
            profiles.append(UEProfile(rates, float(p["eta"]), float(p["f_max"]), float(p["weight"])))
    if not ok or weights is None:
        return None
    system = SystemConfig(int(d["num_ues"]), float(d["es_rate"]), float(d["V"]), weights, tuple(profiles))
    out.extend(system.problems())
    return system


def _build_policies(items, system, out):
    if not isinstance(items, list):
        out.append("policies: expected a list with one entry per profile")
        return None
    if system is not None and len(items) != len(system.profiles):
        out.append(f"policies: expected {len(system.profiles)} entries (one per profile), got {len(items)}")
        return None
    policies = []
    for i, item in enumerate(items):
        where = f"policies[{i}]"
        if not isinstance(item, dict):
            out.append(f"{where}: expected an object")
            return None
        _check_keys(item, ("p", "mu0"), where, out)
        p = _class_values(item.get("p"), f"{where}.p", out)
        if not _num(item.get("mu0")):
            out.append(f"{where}.mu0: expected a number, got {item.get('mu0')!r}")
            return None
        if p is None:
            return None
        pol = Policy(p, float(item["mu0"]))
        f_max = system.profiles[i].f_max if system is not None else float("inf")
        out.extend(pol.problems(f_max, where))
        policies.append(pol)
    return tuple(policies)


def _build_solver(d, out):
    if not isinstance(d, dict):
        out.append("solver: expected an object")
        return None
    _check_keys(d, DEFAULTS["solver"], "solver", out)
    for k, v in d.items():
        if k in DEFAULTS["solver"] and not _num(v):
            out.append(f"solver.{k}: expected a number, got {v!r}")
            return None
    kw = {k: d[k] for k in DEFAULTS["solver"]}
    settings = SolverSettings(**kw)
    out.extend(settings.problems())
    return settings


def _check_sim(d, out):
    if not isinstance(d, dict):
        out.append("sim: expected an object")
        return
    _check_keys(d, DEFAULTS["sim"], "sim", out)
    horizon, events = d.get("horizon"), d.get("events")
    if (horizon is None) == (events is None):
        out.append("sim: exactly one of horizon / events must be set")
    if horizon is not None and not (_num(horizon) and horizon > 0):
        out.append(f"sim.horizon: must be a number > 0, got {horizon!r}")
    if events is not None and not (_int(events) and events > 0):
        out.append(f"sim.events: must be an integer > 0, got {events!r}")
    wf = d.get("warmup_fraction")
    if not (_num(wf) and 0 <= wf < 1):
        out.append(f"sim.warmup_fraction: must be in [0, 1), got {wf!r}")
    for k, lo in (("rng_seed", 0), ("replications", 1), ("batches", 2)):
        if not (_int(d.get(k)) and d[k] >= lo):
            out.append(f"sim.{k}: must be an integer >= {lo}, got {d.get(k)!r}")


def _check_sweep(d, doc, out):
    if not isinstance(d, dict):
        out.append("sweep: required when mode is sweep")
        return
    _check_keys(d, SWEEP_DEFAULTS, "sweep", out)
    path = d.get("parameter")
    if not isinstance(path, str):
        out.append("sweep.parameter: expected a parameter path such as 'system.es_rate'")
    else:
        try:
            value = get_path(doc, path)
        except (KeyError, ValueError):
            out.append(f"sweep.parameter: path {path!r} does not resolve")
        else:
            if not _num(value) or path.split(".")[0] in ("sweep", "mode", "schema_version"):
                out.append(f"sweep.parameter: path {path!r} is not a scalar numeric field")
    values = d.get("values")
    if not isinstance(values, list) or not values:
        out.append("sweep.values: grid must be a nonempty list")
    elif not all(_num(v) for v in values):
        out.append("sweep.values: grid entries must be numbers")
    else:
        steps = [b - a for a, b in zip(values, values[1:])]
        if not (all(s > 0 for s in steps) or all(s < 0 for s in steps)):
            out.append("sweep.values: grid must be strictly monotone")
    if d.get("mode") not in ("aoi", "simulate", "solve"):
        out.append(f"sweep.mode: must be one of aoi, simulate, solve; got {d.get('mode')!r}")
    if not isinstance(d.get("warm_start"), bool):
        out.append("sweep.warm_start: expected true or false")


def build(doc: dict, mode: str | None = None) -> Experiment:
    """Validate a normalized document. Raises ConfigError listing every problem."""
    out = []
    _check_keys(doc, DEFAULTS, "", out)
    if doc.get("schema_version") != SCHEMA_VERSION:
        out.append(f"schema_version: expected {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    mode = mode or doc.get("mode")
    if mode not in MODES:
        out.append(f"mode: must be one of {', '.join(MODES)}; got {mode!r}")
    system = _build_system(doc.get("system"), out)
    policies = _build_policies(doc.get("policies"), system, out)
    solver = _build_solver(doc.get("solver"), out)
    _check_sim(doc.get("sim"), out)
    if not isinstance(doc.get("output"), str) or not doc.get("output"):
        out.append(f"output: expected a directory path, got {doc.get('output')!r}")
    if mode == "sweep":
        _check_sweep(doc.get("sweep"), doc, out)
    if out:
        raise ConfigError(out)
    resolved = copy.deepcopy(doc)
    resolved["mode"] = mode
    return Experiment(mode, system, policies, solver, dict(doc["sim"]), doc.get("sweep"), resolved)


def load_document(path) -> dict:
    """Parse a config or manifest file into a raw dict; errors carry line numbers."""
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as e:
        raise ConfigError([f"{path}: cannot read ({e.strerror})"])
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}:{e.lineno}:{e.colno}: {e.msg}"])
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}:1: top level must be an object"])
    if "resolved_config" in raw:
        raw = raw["resolved_config"]
    return raw


def locate(text: str, diagnostic: str) -> int | None:
    """Best-effort line number of the key named by a diagnostic path."""
    path = diagnostic.split(":", 1)[0]
    try:
        parts = [p for p in split_path(path) if isinstance(p, str)]
    except ValueError:
        return None
    pos, line = 0, None
    for part in parts:
        i = text.find(f'"{part}"', pos)
        if i < 0:
            break
        pos = i
        line = text.count("\n", 0, i) + 1
    return line


def load(path, overrides=(), mode=None) -> Experiment:
    raw = load_document(path)
    doc = normalize(raw)
    problems = []
    for item in overrides:
        try:
            key, value = parse_override(item)
            if key.split(".")[0].split("[")[0] in ("sweep",) and doc.get("sweep") is None:
                doc["sweep"] = copy.deepcopy(SWEEP_DEFAULTS)
            set_path(doc, key, value)
            other = {"sim.horizon": "sim.events", "sim.events": "sim.horizon"}.get(key)
            if other and value is not None and not any(o.startswith(other + "=") for o in overrides):
                set_path(doc, other, None)
        except (ValueError, KeyError, IndexError, TypeError) as e:
            problems.append(f"--set {item}: {e}")
    if problems:
        raise ConfigError(problems)
    doc = normalize(doc)
    try:
        return build(doc, mode)
    except ConfigError as e:
        text = open(path, encoding="utf-8").read()
        diags = []
        for d in e.diagnostics:
            line = locate(text, d)
            diags.append(f"{path}:{line}: {d}" if line else f"{path}: {d}")
        raise ConfigError(diags) from None
