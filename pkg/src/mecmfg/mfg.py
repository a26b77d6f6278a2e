"""Mean-field equilibrium of the offloading game.

The outer loop is a damped fixed-point iteration on the edge-server
loading; the inner loop is projected, coordinate-wise gradient descent on
one generic UE's cost with finite-difference partials and backtracking.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aoi import (MU0_FLOOR, MeanField, Policy, SystemConfig, UEProfile, cost_finite,
                  cost_meanfield)
from .errors import NonFinite, StalledDescent

log = logging.getLogger(__name__)

NUM_COORDS = 4  # (p_r, p_y, p_g, mu0)
DESCENT_SLACK = 1e-12
MAX_HALVINGS = 20


@dataclass(frozen=True)
class SolverSettings:
    eps_rho: float = 1e-6
    eps_policy: float = 1e-6
    gamma_mf: float = 0.5
    gamma_step: float = 1e-2
    fd_step: float = 1e-5
    max_outer: int = 500
    max_inner: int = 200
    rng_seed: int = 0

    def problems(self, where="solver") -> list[str]:
        out = []
        for name in ("eps_rho", "eps_policy", "gamma_step", "fd_step"):
            if not getattr(self, name) > 0:
                out.append(f"{where}.{name}: must be > 0, got {getattr(self, name)}")
        if not 0 < self.gamma_mf <= 1:
            out.append(f"{where}.gamma_mf: must be in (0, 1], got {self.gamma_mf}")
        for name in ("max_outer", "max_inner"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 0):
                out.append(f"{where}.{name}: must be a nonnegative integer, got {v}")
        return out


@dataclass
class TraceEntry:
    iteration: int
    rho: tuple
    policies: tuple
    costs: tuple
    residual: float


@dataclass
class EquilibriumResult:
    policies: tuple  # aligned with config.profiles
    mean_field: MeanField
    mf_residual: float
    outer_iterations: int
    converged: bool
    trace: list = field(default_factory=list)

    def fixed_point_gap(self, config: SystemConfig) -> float:
        return self.mean_field.distance(mf_from_policies(self.policies, config.profiles, config.es_rate))


def bounds(f_max: float):
    lo = np.array([0.0, 0.0, 0.0, MU0_FLOOR])
    hi = np.array([1.0, 1.0, 1.0, f_max])
    return lo, hi


def project(x, f_max: float) -> np.ndarray:
    lo, hi = bounds(f_max)
    return np.clip(np.asarray(x, dtype=float), lo, hi)


def fd_partial(cost: Callable, x, i: int, h: float, f_max: float = math.inf) -> float:
    """Central difference along coordinate ``i``; one-sided where the
    central stencil would leave the box."""
    lo, hi = bounds(f_max)
    x = np.asarray(x, dtype=float)
    up, down = x.copy(), x.copy()
    up[i] += h
    down[i] -= h
    if down[i] < lo[i]:
        return (cost(up) - cost(x)) / h
    if up[i] > hi[i]:
        return (cost(x) - cost(down)) / h
    return (cost(up) - cost(down)) / (2 * h)


def projected_gradient(cost, x, h, f_max) -> np.ndarray:
    g = np.array([fd_partial(cost, x, i, h, f_max) for i in range(NUM_COORDS)])
    return x - project(x - g, f_max)


def projected_step(cost, x, settings: "SolverSettings", f_max) -> float:
    """Stationarity measure ||x - P(x - gamma_step * grad)||_inf, the step an
    undamped descent iteration would take; comparable to ``eps_policy``."""
    g = np.array([fd_partial(cost, x, i, settings.fd_step, f_max) for i in range(NUM_COORDS)])
    return float(np.abs(x - project(x - settings.gamma_step * g, f_max)).max())


def _finite(cost):
    def wrapped(x):
        val = cost(x)
        if not np.isfinite(val):
            raise NonFinite(f"cost is {val} at {tuple(x)}", iterate=tuple(x))
        return val
    return wrapped


def best_response(cost: Callable, x0, settings: SolverSettings, f_max: float,
                  history: list | None = None) -> np.ndarray:
    """Projected coordinate descent from ``x0``.

    Coordinates are visited in the order (p_r, p_y, p_g, mu0); each is
    iterated until its update is below ``eps_policy`` or ``max_inner``
    steps. Sweeps repeat (at most ``max_inner`` times) until a whole sweep
    moves no coordinate by more than ``eps_policy``. A step that would raise
    the cost is halved up to 20 times; accepted steps never increase the
    cost by more than 1e-12. ``history`` (if given) receives
    ``(coordinate, x, cost)`` per accepted step.
    """
    cost = _finite(cost)
    h = settings.fd_step
    x = project(x0, f_max)
    fx = cost(x)
    lo, hi = bounds(f_max)
    moved = False
    for _ in range(settings.max_inner):
        sweep_move = 0.0
        for i in range(NUM_COORDS):
            for _ in range(settings.max_inner):
                g = fd_partial(cost, x, i, h, f_max)
                step = settings.gamma_step
                for _ in range(MAX_HALVINGS + 1):
                    trial = x.copy()
                    trial[i] = min(max(x[i] - step * g, lo[i]), hi[i])
                    ft = cost(trial)
                    if ft <= fx + DESCENT_SLACK:
                        break
                    step *= 0.5
                else:
                    break
                delta = abs(trial[i] - x[i])
                sweep_move = max(sweep_move, delta)
                x, fx = trial, ft
                if history is not None:
                    history.append((i, x.copy(), fx))
                if delta <= settings.eps_policy:
                    break
        moved = moved or sweep_move > 0
        if sweep_move <= settings.eps_policy:
            break
    if not moved and settings.max_inner > 0:
        pg = projected_step(cost, x, settings, f_max)
        if pg > 10 * settings.eps_policy:
            raise StalledDescent(f"no descent from {tuple(x)} with projected step {pg:.3e}")
    return x


def mf_from_policies(policies: Sequence[Policy], profiles: Sequence[UEProfile], mu: float) -> MeanField:
    rho = np.zeros(3)
    for pol, prof in zip(policies, profiles):
        rho += prof.weight * np.array([lam * (1 - p) for lam, p in zip(prof.arrival_rates, pol.p)])
    return MeanField(tuple(float(r) for r in rho / mu))


def meanfield_cost_fn(rho: MeanField, profile: UEProfile, config: SystemConfig):
    return lambda x: cost_meanfield(Policy.from_vector(x), rho, profile, config)


def solve_mfe(config: SystemConfig, settings: SolverSettings = SolverSettings(),
              init_policies: Sequence[Policy] | None = None,
              init_rho: MeanField | None = None) -> EquilibriumResult:
    config.validate()
    if init_policies is None:
        init_policies = [Policy((0.6, 0.5, 0.6), 0.7)] * len(config.profiles)
    policies = tuple(Policy.from_vector(project(p.vector(), prof.f_max))
                     for p, prof in zip(init_policies, config.profiles))
    rho = init_rho or mf_from_policies(policies, config.profiles, config.es_rate)
    gamma = settings.gamma_mf
    trace = []
    residual = math.inf
    converged = False
    k = 0
    for k in range(1, settings.max_outer + 1):
        new_policies, costs = [], []
        for pol, prof in zip(policies, config.profiles):
            fn = meanfield_cost_fn(rho, prof, config)
            x = best_response(fn, pol.vector(), settings, prof.f_max)
            new_policies.append(Policy.from_vector(x))
            costs.append(float(fn(x)))
        target = mf_from_policies(new_policies, config.profiles, config.es_rate)
        new_rho = MeanField(tuple((1 - gamma) * r + gamma * t for r, t in zip(rho.rho, target.rho)))
        residual = new_rho.distance(rho)
        policies, rho = tuple(new_policies), new_rho
        trace.append(TraceEntry(k, rho.rho, tuple(tuple(p.vector()) for p in policies), tuple(costs), residual))
        log.debug("outer %d residual %.3e rho %s", k, residual, rho.rho)
        if residual <= settings.eps_rho:
            converged = True
            break
    return EquilibriumResult(policies, rho, residual, k, converged, trace)


def deploy(policies: Sequence[Policy], config: SystemConfig) -> list:
    """Assign the per-type policies to ``num_ues`` concrete UEs in
    proportion to the type weights (largest-remainder rounding)."""
    n = config.num_ues
    raw = np.array([prof.weight * n for prof in config.profiles])
    counts = np.floor(raw).astype(int)
    for j in np.argsort(-(raw - counts))[: n - counts.sum()]:
        counts[j] += 1
    out = []
    for pol, prof, cnt in zip(policies, config.profiles, counts):
        out.extend([(pol, prof)] * int(cnt))
    return out


@dataclass
class DeviationGap:
    type_index: int
    equilibrium_cost: float
    deviation_cost: float
    deviation: Policy

    @property
    def gap(self) -> float:
        return self.equilibrium_cost - self.deviation_cost

    @property
    def relative_gap(self) -> float:
        return self.gap / abs(self.equilibrium_cost)


def deviation_gaps(result: EquilibriumResult, config: SystemConfig,
                   settings: SolverSettings = SolverSettings()) -> list[DeviationGap]:
    ues = deploy(result.policies, config)
    gaps = []
    for t, (pol, prof) in enumerate(zip(result.policies, config.profiles)):
        try:
            idx = next(i for i, (_, pr) in enumerate(ues) if pr is prof)
        except StopIteration:
            continue  # type has no UE at this population size

        def fn(x, idx=idx, prof=prof):
            trial = list(ues)
            trial[idx] = (Policy.from_vector(x), prof)
            return cost_finite(trial, idx, config)

        x = best_response(fn, pol.vector(), settings, prof.f_max)
        gaps.append(DeviationGap(t, fn(pol.vector()), fn(x), Policy.from_vector(x)))
    return gaps


def exploitability(result: EquilibriumResult, config: SystemConfig,
                   settings: SolverSettings = SolverSettings(), relative: bool = False) -> float:
    gaps = deviation_gaps(result, config, settings)
    return max((g.relative_gap if relative else g.gap) for g in gaps)
