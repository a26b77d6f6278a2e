"""Average AoI of piecewise-linear stochastic hybrid systems.

A finite CTMC drives a vector of ages. Between jumps every age coordinate
grows at rate ``growth[s][k]`` (0 or 1); each transition applies a linear
reset in which every output coordinate is either zeroed or copied from one
input coordinate. The stationary distribution and the stationary
conditional first moments of the age vector follow from two dense linear
systems; the average AoI is the column-0 sum of the moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidSpec, SingularChain, SingularMomentSystem

STATIONARY_TOL = 1e-12
MOMENT_TOL = 1e-9


@dataclass(frozen=True)
class ResetMap:
    """``sources[k]`` is ``None`` (coordinate k is zeroed) or the index of
    the coordinate copied into k."""

    sources: tuple

    @classmethod
    def of(cls, *sources):
        return cls(tuple(sources))

    @classmethod
    def parse(cls, text: str) -> "ResetMap":
        # "x0 0 x2" -> (0, None, 2)
        out = []
        for tok in text.split():
            if tok == "0":
                out.append(None)
            elif tok.startswith("x"):
                out.append(int(tok[1:]))
            else:
                raise ValueError(f"bad reset token {tok!r}")
        return cls(tuple(out))

    @property
    def dim(self) -> int:
        return len(self.sources)

    def matrix(self) -> np.ndarray:
        """Binary matrix A with ``x' = x @ A``."""
        a = np.zeros((self.dim, self.dim))
        for k, j in enumerate(self.sources):
            if j is not None:
                a[j, k] = 1.0
        return a

    def apply(self, x):
        return np.array([0.0 if j is None else x[j] for j in self.sources])

    def __str__(self):
        return "[" + " ".join("0" if j is None else f"x{j}" for j in self.sources) + "]"


@dataclass(frozen=True)
class TransitionSpec:
    source: int
    rate: float
    target: int
    reset: ResetMap
    label: str = ""


@dataclass(frozen=True)
class CtmcSpec:
    num_states: int
    age_dim: int
    growth: tuple
    transitions: tuple
    state_labels: tuple = field(default=())

    def label(self, s: int) -> str:
        return self.state_labels[s] if self.state_labels else f"s{s + 1}"

    def out_rates(self) -> np.ndarray:
        out = np.zeros(self.num_states)
        for t in self.transitions:
            out[t.source] += t.rate
        return out


def validate_spec(spec: CtmcSpec) -> list[str]:
    """Return every invariant violation of ``spec``; empty means valid."""
    problems = []
    c, d = spec.num_states, spec.age_dim
    if c < 1:
        problems.append(f"num_states must be >= 1, got {c}")
    if d < 1:
        problems.append(f"age_dim must be >= 1, got {d}")
    if problems:
        return problems
    if len(spec.growth) != c:
        problems.append(f"growth has {len(spec.growth)} rows, expected {c}")
    else:
        for s, row in enumerate(spec.growth):
            if len(row) != d or any(u not in (0, 1) for u in row):
                problems.append(f"growth of state {spec.label(s)} must be {d} entries in {{0,1}}")
    for m, t in enumerate(spec.transitions):
        name = t.label or f"transition {m}"
        if not (0 <= t.source < c) or not (0 <= t.target < c):
            problems.append(f"{name}: state index out of range ({t.source} -> {t.target})")
        if not np.isfinite(t.rate) or t.rate <= 0:
            problems.append(f"{name}: rate must be > 0, got {t.rate}")
        if t.reset.dim != d:
            problems.append(f"{name}: reset has {t.reset.dim} coordinates, expected {d}")
        elif any(j is not None and not (0 <= j < d) for j in t.reset.sources):
            problems.append(f"{name}: reset source index out of range")
    if problems:
        return problems
    ncomp, labels = _components(spec)
    if ncomp > 1:
        main = np.bincount(labels).argmax()
        for s in range(c):
            if labels[s] != main:
                problems.append(f"state {spec.label(s)} is not in the main communicating class")
    return problems


def _components(spec: CtmcSpec):
    c = spec.num_states
    rows = [t.source for t in spec.transitions]
    cols = [t.target for t in spec.transitions]
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(c, c))
    return connected_components(graph, directed=True, connection="strong")


def recurrent_states(spec: CtmcSpec) -> list[int]:
    """States of the unique closed communicating class.

    Transitions with zero rate are ignored. Raises SingularChain when the
    chain has more than one closed class (no unique stationary law).
    """
    live = CtmcSpec(spec.num_states, spec.age_dim, spec.growth,
                    tuple(t for t in spec.transitions if t.rate > 0), spec.state_labels)
    _, labels = _components(live)
    closed = set(labels)
    for t in live.transitions:
        if labels[t.source] != labels[t.target]:
            closed.discard(labels[t.source])
    if len(closed) != 1:
        raise SingularChain(f"chain has {len(closed)} closed classes")
    (cls,) = closed
    return [s for s in range(spec.num_states) if labels[s] == cls]


def reachable_states(spec: CtmcSpec, start: int = 0) -> list[int]:
    seen = {start}
    frontier = [start]
    while frontier:
        s = frontier.pop()
        for t in spec.transitions:
            if t.source == s and t.rate > 0 and t.target not in seen:
                seen.add(t.target)
                frontier.append(t.target)
    return sorted(seen)


def restrict(spec: CtmcSpec, states: Sequence[int]) -> CtmcSpec:
    """Sub-chain on ``states`` (relabelled in order); transitions leaving the
    set, and zero-rate transitions, are dropped."""
    index = {s: i for i, s in enumerate(states)}
    trans = tuple(
        TransitionSpec(index[t.source], t.rate, index[t.target], t.reset, t.label)
        for t in spec.transitions
        if t.rate > 0 and t.source in index and t.target in index
    )
    labels = tuple(spec.label(s) for s in states)
    growth = tuple(spec.growth[s] for s in states)
    return CtmcSpec(len(states), spec.age_dim, growth, trans, labels)


def generator(spec: CtmcSpec) -> np.ndarray:
    c = spec.num_states
    q = np.zeros((c, c))
    for t in spec.transitions:
        q[t.source, t.target] += t.rate
        q[t.source, t.source] -= t.rate
    return q


def stationary_system(spec: CtmcSpec):
    """Balance equations with the last state's row replaced by sum(pi) = 1."""
    a = generator(spec).T.copy()
    b = np.zeros(spec.num_states)
    a[-1, :] = 1.0
    b[-1] = 1.0
    return a, b


def moment_system(spec: CtmcSpec, pi: np.ndarray):
    """Linear system for the conditional moments, flattened row-major
    (unknown ``s * age_dim + k``)."""
    c, d = spec.num_states, spec.age_dim
    m = np.zeros((c * d, c * d))
    out = spec.out_rates()
    for s in range(c):
        for k in range(d):
            m[s * d + k, s * d + k] += out[s]
    for t in spec.transitions:
        for k, j in enumerate(t.reset.sources):
            if j is not None:
                m[t.target * d + k, t.source * d + j] -= t.rate
    b = (np.asarray(spec.growth, dtype=float) * np.asarray(pi)[:, None]).ravel()
    return m, b


def _check(spec):
    problems = validate_spec(spec)
    if problems:
        raise InvalidSpec(problems)


def solve_stationary(spec: CtmcSpec, tol: float = STATIONARY_TOL, validate: bool = True) -> np.ndarray:
    if validate:
        _check(spec)
    a, b = stationary_system(spec)
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularChain(str(exc)) from exc
    resid = stationary_residual(spec, pi)
    if not np.all(np.isfinite(pi)) or resid > tol:
        raise SingularChain(f"stationary residual {resid:.3e} exceeds {tol:.1e}")
    return pi


def stationary_residual(spec: CtmcSpec, pi: np.ndarray) -> float:
    """Normwise relative residual of the balance equations."""
    q = generator(spec)
    scale = max(np.abs(np.diag(q)).max(), 1e-300) * max(np.abs(pi).max(), 1e-300)
    return float(np.abs(pi @ q).max() / scale)


def solve_conditional_moments(spec: CtmcSpec, pi: np.ndarray, tol: float = MOMENT_TOL) -> np.ndarray:
    m, b = moment_system(spec, pi)
    try:
        v = np.linalg.solve(m, b)
    except np.linalg.LinAlgError as exc:
        raise SingularMomentSystem(str(exc)) from exc
    if not np.all(np.isfinite(v)):
        raise SingularMomentSystem("non-finite moments")
    resid = moment_residuals(spec, pi, v.reshape(spec.num_states, spec.age_dim)).max()
    if resid > tol:
        raise SingularMomentSystem(f"moment residual {resid:.3e} exceeds {tol:.1e}")
    return v.reshape(spec.num_states, spec.age_dim)


def moment_residuals(spec: CtmcSpec, pi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-state relative residual of the moment balance, evaluated directly
    from the transition list (independent of ``moment_system``). Rows far
    below the largest one are measured against 1e-7 of that row, so states
    with vanishing probability do not report pure round-off."""
    c, d = spec.num_states, spec.age_dim
    lhs = spec.out_rates()[:, None] * v
    rhs = np.asarray(spec.growth, dtype=float) * np.asarray(pi)[:, None]
    for t in spec.transitions:
        rhs[t.target] += t.rate * t.reset.apply(v[t.source])
    scale = np.maximum(np.abs(lhs).max(axis=1), np.abs(rhs).max(axis=1))
    scale = np.maximum(scale, max(scale.max() * 1e-7, 1e-300))
    return np.abs(lhs - rhs).max(axis=1) / scale


def average_aoi(moments: np.ndarray) -> float:
    return float(np.asarray(moments)[:, 0].sum())


@dataclass
class AoiSolution:
    spec: CtmcSpec
    pi: np.ndarray
    moments: np.ndarray

    @property
    def aoi(self) -> float:
        return average_aoi(self.moments)


def analyze(spec: CtmcSpec) -> AoiSolution:
    pi = solve_stationary(spec)
    return AoiSolution(spec, pi, solve_conditional_moments(spec, pi))


class ChainTable:
    """A CTMC whose transition rates are named symbols.

    Rows are ``(source, symbol, target, reset)``; a symbol may be a product
    of names joined with ``*`` (e.g. ``"lam*p"``), each name looked up in the
    rate mapping. The same table yields either an explicit ``CtmcSpec``
    (zero-rate rows dropped, reduced to the recurrent class) or, through
    :meth:`solve_fast`, the AoI from coefficient tensors assembled once.
    """

    def __init__(self, num_states, age_dim, rows, state_labels=()):
        self.num_states = num_states
        self.age_dim = age_dim
        self.rows = [(s, sym, t, r if isinstance(r, ResetMap) else ResetMap.parse(r))
                     for s, sym, t, r in rows]
        self.state_labels = tuple(state_labels)
        self.symbols = sorted({sym for _, sym, _, _ in self.rows})
        c, d = num_states, age_dim
        self._q = np.zeros((len(self.symbols), c, c))
        self._m = np.zeros((len(self.symbols), c * d, c * d))
        for s, sym, t, reset in self.rows:
            i = self.symbols.index(sym)
            self._q[i, s, t] += 1.0
            self._q[i, s, s] -= 1.0
            for k in range(d):
                self._m[i, s * d + k, s * d + k] += 1.0
            for k, j in enumerate(reset.sources):
                if j is not None:
                    self._m[i, t * d + k, s * d + j] -= 1.0

    @staticmethod
    def rate(sym: str, values: Mapping[str, float]) -> float:
        r = 1
        for name in sym.split("*"):
            r *= values[name]
        return r

    def spec(self, values: Mapping[str, float], reduce: bool = True) -> CtmcSpec:
        trans = tuple(
            TransitionSpec(s, self.rate(sym, values), t, reset, f"{self.label(s)} --{sym}--> {self.label(t)}")
            for s, sym, t, reset in self.rows
        )
        growth = tuple((1,) * self.age_dim for _ in range(self.num_states))
        full = CtmcSpec(self.num_states, self.age_dim, growth, trans, self.state_labels)
        if not reduce:
            return full
        reach = restrict(full, reachable_states(full, 0))
        return restrict(reach, recurrent_states(reach))

    def label(self, s):
        return self.state_labels[s] if self.state_labels else f"s{s + 1}"

    def solve_fast(self, values: Mapping[str, float]) -> float:
        """Average AoI from the full-size systems (zero rates allowed).

        Valid whenever the chain has a single closed class; transient states
        get zero probability and zero moments. Raises SingularChain or
        SingularMomentSystem otherwise.
        """
        r = np.array([self.rate(sym, values) for sym in self.symbols])
        q = np.tensordot(r, self._q, axes=1)
        a = q.T.copy()
        a[-1, :] = 1.0
        b = np.zeros(self.num_states)
        b[-1] = 1.0
        try:
            pi = np.linalg.solve(a, b)
            m = np.tensordot(r, self._m, axes=1)
            v = np.linalg.solve(m, np.repeat(pi, self.age_dim))
        except np.linalg.LinAlgError as exc:
            raise SingularChain(str(exc)) from exc
        if not (np.all(np.isfinite(v)) and np.abs(pi @ q).max() <= 1e-9 * max(1.0, -q.diagonal().min())):
            raise SingularChain("fast path produced an inconsistent solution")
        return float(v.reshape(self.num_states, self.age_dim)[:, 0].sum())
