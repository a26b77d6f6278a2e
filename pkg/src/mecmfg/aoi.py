"""Concrete AoI chains for the three urgency classes, power and UE costs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidConfig, NoServicePath, SingularChain
from .shs import ChainTable, CtmcSpec, analyze

MU0_FLOOR = 1e-6


class TaskClass(enum.IntEnum):
    """Urgency classes; the integer value is the array index (0 = red)."""

    RED = 0
    YELLOW = 1
    GREEN = 2

    @property
    def priority(self) -> int:
        return 2 - int(self)

    def preempts(self, other: "TaskClass") -> bool:
        """LCFS with priority preemption: same class or more urgent wins."""
        return self.priority >= other.priority


CLASSES = tuple(TaskClass)


@dataclass(frozen=True)
class UEProfile:
    arrival_rates: tuple  # (red, yellow, green)
    eta: float = 1.0
    f_max: float = 2.0
    weight: float = 1.0

    def problems(self, where="profile") -> list[str]:
        out = []
        if len(self.arrival_rates) != 3:
            out.append(f"{where}.arrival_rates: expected 3 entries")
        else:
            for a, lam in zip(CLASSES, self.arrival_rates):
                if not lam > 0:
                    out.append(f"{where}.arrival_rates.{a.name.lower()}: must be > 0, got {lam}")
        if not self.eta > 0:
            out.append(f"{where}.eta: must be > 0, got {self.eta}")
        if not self.f_max > 0:
            out.append(f"{where}.f_max: must be > 0, got {self.f_max}")
        if not 0 <= self.weight <= 1:
            out.append(f"{where}.weight: must be in [0, 1], got {self.weight}")
        return out


@dataclass(frozen=True)
class Policy:
    p: tuple  # local-service probability per class
    mu0: float

    @classmethod
    def from_vector(cls, x) -> "Policy":
        return cls((float(x[0]), float(x[1]), float(x[2])), float(x[3]))

    def vector(self) -> np.ndarray:
        return np.array([*self.p, self.mu0], dtype=float)

    def problems(self, f_max=np.inf, where="policy") -> list[str]:
        out = [f"{where}.p.{a.name.lower()}: must be in [0, 1], got {pa}"
               for a, pa in zip(CLASSES, self.p) if not 0 <= pa <= 1]
        if not 0 <= self.mu0 <= f_max:
            out.append(f"{where}.mu0: must be in [0, {f_max}], got {self.mu0}")
        return out


@dataclass(frozen=True)
class SystemConfig:
    num_ues: int = 10
    es_rate: float = 10.0
    V: float = 10.0
    aoi_weights: tuple = (20.0, 5.0, 2.0)
    profiles: tuple = (UEProfile((1.0, 3.0, 6.0)),)

    def problems(self, where="system") -> list[str]:
        out = []
        if not (isinstance(self.num_ues, (int, np.integer)) and self.num_ues >= 1):
            out.append(f"{where}.num_ues: must be an integer >= 1, got {self.num_ues}")
        if not self.es_rate > 0:
            out.append(f"{where}.es_rate: must be > 0, got {self.es_rate}")
        if not self.V > 0:
            out.append(f"{where}.V: must be > 0, got {self.V}")
        if len(self.aoi_weights) != 3 or any(not w > 0 for w in self.aoi_weights):
            out.append(f"{where}.aoi_weights: need three positive weights, got {self.aoi_weights}")
        if not self.profiles:
            out.append(f"{where}.profiles: at least one profile required")
        for i, prof in enumerate(self.profiles):
            out.extend(prof.problems(f"{where}.profiles[{i}]"))
        if self.profiles and abs(sum(p.weight for p in self.profiles) - 1.0) > 1e-12:
            out.append(f"{where}.profiles: weights must sum to 1")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise InvalidConfig("; ".join(problems))
        return self


@dataclass(frozen=True)
class ExogenousRates:
    """Rates seen by one UE. ``lambda_minus[a]`` is same-class ES traffic of
    the other UEs; ``lambda_high_total[a]`` the ES traffic of every class
    more urgent than ``a`` (all UEs); ``lambda_high_local[a]`` the UE's own
    locally served traffic more urgent than ``a``. Red entries of the last
    two are always zero."""

    lambda_minus: tuple
    lambda_high_total: tuple
    lambda_high_local: tuple


@dataclass(frozen=True)
class MeanField:
    rho: tuple = (0.0, 0.0, 0.0)

    def distance(self, other: "MeanField") -> float:
        return float(np.max(np.abs(np.subtract(self.rho, other.rho))))


@dataclass(frozen=True)
class AoiBreakdown:
    per_class: tuple
    weighted: float
    weights: tuple = field(default=(1.0, 1.0, 1.0))


# Tables of the red and yellow/green chains. Age coordinates: 0 = UE,
# 1 = local processor, 2 = edge server. Resets read "x' = [..]".
RED_STATES = ("s1", "s2", "s3")
RED_ROWS = [
    (0, "lam*p", 0, "x0 0 x2"),
    (0, "lam*pbar", 1, "x0 x1 0"),
    (0, "lam_e", 2, "x0 x1 x0"),
    (0, "mu0", 0, "x1 x1 x1"),
    (0, "mu", 0, "x2 x1 x2"),
    (1, "lam*p", 0, "x0 0 x2"),
    (1, "lam*pbar", 1, "x0 x1 0"),
    (1, "lam_e", 2, "x0 x1 x0"),
    (1, "mu0", 1, "x1 x1 x2"),
    (1, "mu", 1, "x2 x2 x2"),
    (2, "lam*p", 2, "x0 0 x2"),
    (2, "lam*pbar", 1, "x0 x1 0"),
    (2, "lam_e", 2, "x0 x1 x0"),
    (2, "mu0", 2, "x1 x1 x1"),
    (2, "mu", 2, "x2 x1 x2"),
]

YG_STATES = ("s1", "s2", "s3", "s4", "s5", "s6", "s7")
YG_ROWS = [
    (0, "lam*p", 0, "x0 0 x2"),
    (0, "lam*pbar", 1, "x0 x1 0"),
    (0, "lam_hl", 4, "x0 x0 x2"),
    (0, "lam_h", 2, "x0 x1 x0"),
    (0, "lam_e", 3, "x0 x1 x0"),
    (0, "mu0", 0, "x1 x1 x1"),
    (0, "mu", 0, "x2 x1 x2"),
    (1, "lam*p", 0, "x0 0 x2"),
    (1, "lam*pbar", 1, "x0 x1 0"),
    (1, "lam_hl", 4, "x0 x0 x2"),
    (1, "lam_h", 2, "x0 x1 x0"),
    (1, "lam_e", 3, "x0 x1 x0"),
    (1, "mu0", 1, "x1 x1 x2"),
    (1, "mu", 1, "x2 x2 x2"),
    (2, "lam*p", 2, "x0 0 x2"),
    (2, "lam*pbar", 2, "x0 x1 x2"),
    (2, "lam_hl", 5, "x0 x0 x2"),
    (2, "lam_h", 2, "x0 x1 x0"),
    (2, "lam_e", 2, "x0 x1 x2"),
    (2, "mu0", 2, "x1 x1 x1"),
    (2, "mu", 3, "x2 x1 x2"),
    (3, "lam*p", 3, "x0 0 x2"),
    (3, "lam*pbar", 1, "x0 x1 0"),
    (3, "lam_hl", 6, "x0 x0 x2"),
    (3, "lam_h", 2, "x0 x1 x0"),
    (3, "lam_e", 3, "x0 x1 x0"),
    (3, "mu0", 3, "x1 x1 x1"),
    (3, "mu", 3, "x2 x1 x2"),
    (4, "lam*p", 4, "x0 x1 x2"),
    (4, "lam*pbar", 4, "x0 x1 0"),
    (4, "lam_hl", 4, "x0 x0 x2"),
    (4, "lam_h", 5, "x0 x1 x0"),
    (4, "lam_e", 6, "x0 x1 x0"),
    (4, "mu0", 1, "x1 x1 x2"),
    (4, "mu", 4, "x2 x2 x2"),
    (5, "lam*p", 5, "x0 x1 x2"),
    (5, "lam*pbar", 5, "x0 x1 x2"),
    (5, "lam_hl", 5, "x0 x0 x2"),
    (5, "lam_h", 5, "x0 x1 x0"),
    (5, "lam_e", 5, "x0 x1 x2"),
    (5, "mu0", 2, "x1 x1 x2"),
    (5, "mu", 6, "x2 x1 x2"),
    (6, "lam*p", 6, "x0 x1 x2"),
    (6, "lam*pbar", 4, "x0 x1 0"),
    (6, "lam_hl", 6, "x0 x0 x2"),
    (6, "lam_h", 5, "x0 x1 x0"),
    (6, "lam_e", 6, "x0 x1 x0"),
    (6, "mu0", 1, "x1 x1 x2"),
    (6, "mu", 6, "x2 x1 x2"),
]

RED_TABLE = ChainTable(3, 3, RED_ROWS, RED_STATES)
YG_TABLE = ChainTable(7, 3, YG_ROWS, YG_STATES)


def _check_rates(lam, p, mu, **others):
    if not lam > 0:
        raise ValueError(f"own arrival rate must be > 0, got {lam}")
    if not mu > 0:
        raise ValueError(f"edge service rate must be > 0, got {mu}")
    if not 0 <= p <= 1:
        raise ValueError(f"local probability must be in [0, 1], got {p}")
    for name, val in others.items():
        if not val >= 0:
            raise ValueError(f"{name} must be >= 0, got {val}")


def _red_values(lambda_r, p_r, lambda_minus_r, mu0, mu):
    return {"lam": lambda_r, "p": p_r, "pbar": 1.0 - p_r, "lam_e": lambda_minus_r, "mu0": mu0, "mu": mu}


def _yg_values(lambda_b, p_b, lambda_e, lambda_high_total, lambda_high_local, mu0, mu):
    return {"lam": lambda_b, "p": p_b, "pbar": 1.0 - p_b, "lam_e": lambda_e,
            "lam_h": lambda_high_total, "lam_hl": lambda_high_local, "mu0": mu0, "mu": mu}


def build_red_chain(lambda_r, p_r, lambda_minus_r, mu0, mu) -> CtmcSpec:
    """Chain seen by the red stream of one UE, reduced to the states that
    are recurrent and reachable from the empty system (state s1)."""
    _check_rates(lambda_r, p_r, mu, lambda_minus_r=lambda_minus_r, mu0=mu0)
    return RED_TABLE.spec(_red_values(lambda_r, p_r, lambda_minus_r, mu0, mu))


def build_yg_chain(lambda_b, p_b, lambda_e, lambda_high_total, lambda_high_local, mu0, mu) -> CtmcSpec:
    _check_rates(lambda_b, p_b, mu, lambda_e=lambda_e, lambda_high_total=lambda_high_total,
                 lambda_high_local=lambda_high_local, mu0=mu0)
    return YG_TABLE.spec(_yg_values(lambda_b, p_b, lambda_e, lambda_high_total, lambda_high_local, mu0, mu))


def red_aoi_closed_form(lambda_r, p_r, lambda_minus_r, mu0, mu) -> float:
    _check_rates(lambda_r, p_r, mu, lambda_minus_r=lambda_minus_r, mu0=mu0)
    if p_r == 1 and mu0 == 0:
        raise NoServicePath("all red tasks are local but the local processor is off")
    lam, p, le = lambda_r, p_r, lambda_minus_r
    q = 1.0 - p
    den = lam * (mu + (lam + le) * p) * (mu0 * (le + mu + mu0) + lam * (mu + mu0) * q)
    num = (mu0 * (le + mu) * (le + mu + mu0)
           + lam ** 3 * p * q
           + lam ** 2 * (mu + mu0 + le * p * (2 - p))
           + lam * ((mu + mu0) ** 2 + le ** 2 * p + le * (mu * (1 + p) + 2 * mu0)))
    return num / den


def red_aoi_pipeline(lambda_r, p_r, lambda_minus_r, mu0, mu) -> float:
    return analyze(build_red_chain(lambda_r, p_r, lambda_minus_r, mu0, mu)).aoi


def _table_aoi(table, values):
    if all(ChainTable.rate(sym, values) > 0 for sym in table.symbols):
        try:
            return table.solve_fast(values)
        except SingularChain:
            pass
    return analyze(table.spec(values)).aoi


def yg_aoi(lambda_b, p_b, lambda_e, lambda_high_total, lambda_high_local, mu0, mu) -> float:
    """Average AoI of a yellow or green stream; there is no closed form, the
    linear solve is the definition."""
    _check_rates(lambda_b, p_b, mu, lambda_e=lambda_e, lambda_high_total=lambda_high_total,
                 lambda_high_local=lambda_high_local, mu0=mu0)
    if p_b == 1 and mu0 == 0:
        raise NoServicePath("all tasks of this class are local but the local processor is off")
    return _table_aoi(YG_TABLE, _yg_values(lambda_b, p_b, lambda_e, lambda_high_total, lambda_high_local, mu0, mu))


def busy_fractions(policy: Policy, profile: UEProfile) -> tuple:
    out = []
    for lam, p in zip(profile.arrival_rates, policy.p):
        load = lam * p
        if load == 0:
            out.append(0.0)
        else:
            out.append(load / (load + policy.mu0))
    return tuple(out)


def power_bracket(policy: Policy, profile: UEProfile) -> float:
    tr, ty, tg = busy_fractions(policy, profile)
    return tr + (1 - tr) * ty + (1 - tr) * (1 - ty) * tg


def local_power(policy: Policy, profile: UEProfile) -> float:
    return power_bracket(policy, profile) * profile.eta * policy.mu0 ** 3


def exogenous_rates_finite(all_policies: Sequence, self_index: int) -> ExogenousRates:
    """``all_policies`` is a sequence of (Policy, UEProfile) pairs."""
    n = len(all_policies)
    if not 0 <= self_index < n:
        raise IndexError(f"self_index {self_index} out of range for {n} UEs")
    offloaded = np.array([[lam * (1 - p) for lam, p in zip(prof.arrival_rates, pol.p)]
                          for pol, prof in all_policies])
    total = offloaded.sum(axis=0)
    minus = total - offloaded[self_index]
    pol, prof = all_policies[self_index]
    local = [lam * p for lam, p in zip(prof.arrival_rates, pol.p)]
    return ExogenousRates(
        lambda_minus=tuple(float(x) for x in minus),
        lambda_high_total=(0.0, float(total[0]), float(total[0] + total[1])),
        lambda_high_local=(0.0, local[0], local[0] + local[1]),
    )


def exogenous_rates_meanfield(rho: MeanField, N: int, mu: float, self_policy: Policy,
                              self_profile: UEProfile) -> ExogenousRates:
    r, y, g = rho.rho
    local = [lam * p for lam, p in zip(self_profile.arrival_rates, self_policy.p)]
    return ExogenousRates(
        lambda_minus=tuple((N - 1) * mu * x for x in (r, y, g)),
        lambda_high_total=(0.0, N * mu * r, N * mu * (r + y)),
        lambda_high_local=(0.0, local[0], local[0] + local[1]),
    )


def class_aoi(cls: TaskClass, rates: ExogenousRates, policy: Policy, profile: UEProfile, mu: float) -> float:
    lam = profile.arrival_rates[cls]
    p = policy.p[cls]
    if cls is TaskClass.RED:
        return red_aoi_closed_form(lam, p, rates.lambda_minus[0], policy.mu0, mu)
    return yg_aoi(lam, p, rates.lambda_minus[cls], rates.lambda_high_total[cls],
                  rates.lambda_high_local[cls], policy.mu0, mu)


def weighted_aoi(rates: ExogenousRates, policy: Policy, profile: UEProfile, config: SystemConfig) -> AoiBreakdown:
    per = tuple(class_aoi(a, rates, policy, profile, config.es_rate) for a in CLASSES)
    w = tuple(config.aoi_weights)
    return AoiBreakdown(per, float(sum(wi * d for wi, d in zip(w, per))), w)


def cost_finite(all_policies: Sequence, self_index: int, config: SystemConfig) -> float:
    pol, prof = all_policies[self_index]
    rates = exogenous_rates_finite(all_policies, self_index)
    return local_power(pol, prof) + config.V * weighted_aoi(rates, pol, prof, config).weighted


def cost_meanfield(policy: Policy, rho: MeanField, profile: UEProfile, config: SystemConfig) -> float:
    rates = exogenous_rates_meanfield(rho, config.num_ues, config.es_rate, policy, profile)
    return local_power(policy, profile) + config.V * weighted_aoi(rates, policy, profile, config).weighted
