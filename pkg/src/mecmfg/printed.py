"""Symbolic comparison of table-assembled balance systems with the
published balance equations.

The published equations are transcribed below verbatim (state indices
1-based, ``V(a, b, c)`` is a row vector, ``vK`` the whole row of state K).
The transition tables in :mod:`mecmfg.aoi` are the source of truth; this
module only reports where the two disagree.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import sympy as sp

from .aoi import RED_TABLE, YG_TABLE

SYMBOLS = {name: sp.Symbol(name, positive=True)
           for name in ("lam", "p", "lam_e", "lam_h", "lam_hl", "mu0", "mu")}
SYMBOLS["pbar"] = 1 - SYMBOLS["p"]

RED_TOTAL = "lam + lam_e + mu0 + mu"
RED_STATIONARY = [
    "(lam*p + mu0 + mu)*pi1 + lam*p*pi2",
    "(lam*pbar + mu0 + mu)*pi2 + lam*pbar*(pi1 + pi3)",
    "(lam*p + lam_e + mu0 + mu)*pi3 + lam_e*(pi1 + pi2)",
]
RED_MOMENTS = [
    "pi1 + lam*p*V(v10, 0, v12) + mu0*V(v11, v11, v11) + mu*V(v12, v11, v12) + lam*p*V(v20, 0, v22)",
    "pi2 + lam*pbar*V(v20, v21, 0) + mu0*V(v21, v21, v22) + mu*V(v22, v22, v22)"
    " + lam*pbar*V(v10, v11, 0) + lam*pbar*V(v30, v31, 0)",
    "pi3 + lam*p*V(v30, 0, v32) + lam_e*V(v30, v31, v30) + mu*V(v32, v31, v32)"
    " + lam_e*V(v10, v11, v10) + lam_e*V(v20, v21, v20) + mu0*V(v31, v31, v31)",
]

YG_TOTAL = "lam + lam_e + mu0 + mu + lam_h + lam_hl"
YG_STATIONARY = [
    "(lam*p + mu0 + mu)*pi1 + lam*p*pi2",
    "(lam*pbar + mu0 + mu)*pi2 + lam*pbar*(pi1 + pi4) + mu0*(pi5 + pi7)",
    "(lam + lam_h + lam_e + mu0)*pi3 + lam_h*(pi1 + pi2 + pi4) + mu0*pi6",
    "(lam*p + mu0 + mu + lam_e)*pi4 + lam_e*(pi1 + pi2) + mu*pi3",
    "(lam + lam_hl + mu)*pi5 + lam_hl*(pi1 + pi2) + lam*pbar*pi7",
    "(lam + lam_hl + lam_h + lam_e)*pi6 + lam_hl*pi3 + lam_h*(pi5 + pi7)",
    "(lam*p + lam_e + lam_hl + mu)*pi7 + lam_hl*pi4 + lam_e*pi5 + mu*pi6",
]
YG_MOMENTS = [
    "pi1 + lam*p*V(v10, 0, v12) + mu0*V(v11, v11, v11) + mu*V(v12, v11, v12) + lam*p*V(v20, 0, v22)",
    "pi2 + lam*pbar*V(v20, v21, 0) + mu*V(v22, v22, v22) + lam*pbar*V(v10, v11, 0)"
    " + lam*pbar*V(v40, v41, 0) + mu0*(V(v21, v21, v22) + V(v51, v51, v52) + V(v71, v71, v72))",
    "pi3 + lam*p*V(v30, 0, v32) + lam*pbar*V(v30, v31, v32) + lam_e*V(v30, v31, v32)"
    " + mu0*V(v31, v31, v31) + lam_h*V(v30, v31, v30)"
    " + lam_h*(V(v10, v11, v10) + V(v20, v21, v20) + V(v40, v41, v40)) + mu0*V(v61, v61, v62)",
    "pi4 + lam*p*V(v40, 0, v42) + mu*V(v42, v41, v42) + mu0*V(v41, v41, v41)"
    " + lam_e*(V(v40, v41, v40) + V(v10, v11, v10) + V(v20, v21, v20)) + mu*V(v32, v31, v32)",
    "pi5 + lam*p*v5 + lam*pbar*V(v50, v51, 0) + lam_hl*V(v50, v50, v52) + mu*V(v52, v52, v52)"
    " + lam_hl*V(v10, v10, v12) + lam_hl*V(v20, v20, v22) + lam*pbar*V(v70, v71, 0)",
    "pi6 + lam*v6 + lam_hl*V(v60, v60, v62) + lam_h*V(v60, v61, v60) + lam_e*V(v60, v61, v62)"
    " + lam_hl*V(v30, v30, v32) + lam_h*(V(v50, v51, v50) + V(v70, v71, v70))",
    "pi7 + lam*p*v7 + lam_hl*V(v70, v70, v72) + lam_e*V(v70, v71, v70) + mu*V(v72, v71, v72)"
    " + lam_hl*V(v40, v40, v42) + lam_e*V(v50, v51, v50) + mu*V(v62, v61, v62)",
]


@dataclass(frozen=True)
class Discrepancy:
    equation: str
    row: str
    printed: str
    assembled: str
    difference: str


def _namespace(num_states, age_dim):
    ns = dict(SYMBOLS)
    for s in range(1, num_states + 1):
        ns[f"pi{s}"] = sp.Symbol(f"pi{s}")
        row = [sp.Symbol(f"v{s}{k}") for k in range(age_dim)]
        for k, sym in enumerate(row):
            ns[f"v{s}{k}"] = sym
        ns[f"v{s}"] = sp.Matrix([row])
    ns["V"] = lambda *xs: sp.Matrix([list(xs)])
    return ns


def _parse(text, ns):
    return sp.sympify(text, locals=ns)


def _rate(sym, ns):
    r = sp.Integer(1)
    for name in sym.split("*"):
        r *= ns[name]
    return r


def assembled_stationary(table, ns):
    """Per state: (total outflow, inflow expression)."""
    c = table.num_states
    out = [sp.Integer(0)] * c
    inflow = [sp.Integer(0)] * c
    for s, sym, t, _ in table.rows:
        q = _rate(sym, ns)
        out[s] += q
        inflow[t] += q * ns[f"pi{s + 1}"]
    return out, inflow


def assembled_moments(table, ns):
    c, d = table.num_states, table.age_dim
    rhs = [sp.Matrix([[ns[f"pi{s + 1}"]] * d]) for s in range(c)]
    for s, sym, t, reset in table.rows:
        q = _rate(sym, ns)
        src = [sp.Integer(0) if j is None else ns[f"v{s + 1}{j}"] for j in reset.sources]
        rhs[t] = rhs[t] + q * sp.Matrix([src])
    return rhs


def _zero(expr):
    return sp.expand(expr) == 0


def compare(table, total, stationary, moments, eq_pi, eq_v) -> list[Discrepancy]:
    ns = _namespace(table.num_states, table.age_dim)
    found = []
    total_expr = _parse(total, ns)
    out, inflow = assembled_stationary(table, ns)
    for s in range(table.num_states):
        row = f"state s{s + 1}"
        if not _zero(out[s] - total_expr):
            found.append(Discrepancy(eq_pi, row + " outflow", str(total_expr), str(sp.expand(out[s])),
                                     str(sp.expand(out[s] - total_expr))))
        printed = _parse(stationary[s], ns)
        if not _zero(printed - inflow[s]):
            found.append(Discrepancy(eq_pi, row, str(printed), str(sp.expand(inflow[s])),
                                     str(sp.expand(printed - inflow[s]))))
    rhs = assembled_moments(table, ns)
    for s in range(table.num_states):
        printed = _parse(moments[s], ns)
        for k in range(table.age_dim):
            diff = sp.expand(printed[0, k] - rhs[s][0, k])
            if diff != 0:
                found.append(Discrepancy(eq_v, f"v{s + 1} coordinate {k}", str(printed[0, k]),
                                         str(sp.expand(rhs[s][0, k])), str(diff)))
    return found


def _broadcast_pi(text):
    # "pi3 + ..." -> "V(pi3, pi3, pi3) + ..." so the vector equation type-checks
    head, _, tail = text.partition(" + ")
    return f"V({head}, {head}, {head}) + {tail}"


def red_report() -> list[Discrepancy]:
    return compare(RED_TABLE, RED_TOTAL, RED_STATIONARY, [_broadcast_pi(t) for t in RED_MOMENTS],
                   "red stationary balance", "red moment balance")


def yg_report() -> list[Discrepancy]:
    return compare(YG_TABLE, YG_TOTAL, YG_STATIONARY, [_broadcast_pi(t) for t in YG_MOMENTS],
                   "yellow/green stationary balance", "yellow/green moment balance")


# Closed-form red AoI as typeset: the second numerator reads
# "lam_e(mu(1+p) + 2 mu0" with no closing parenthesis and a bare "p".
RED_CLOSED_FORM_NOTE = (
    "closed-form red AoI: second numerator term has an unbalanced parenthesis in "
    "'lam_e(mu(1+p) + 2mu0' and an unsubscripted p; read as lam_e*(mu*(1+p_r) + 2*mu0)"
)


def red_closed_form_exact(lam, p, le, mu0, mu):
    q = 1 - p
    den = lam * (mu + (lam + le) * p) * (mu0 * (le + mu + mu0) + lam * (mu + mu0) * q)
    num = (mu0 * (le + mu) * (le + mu + mu0) + lam ** 3 * p * q + lam ** 2 * (mu + mu0 + le * p * (2 - p))
           + lam * ((mu + mu0) ** 2 + le ** 2 * p + le * (mu * (1 + p) + 2 * mu0)))
    return num / den


def red_pipeline_exact(lam, p, le, mu0, mu):
    """Average red AoI by exact rational elimination on the full table."""
    values = {"lam": lam, "p": p, "pbar": 1 - p, "lam_e": le, "mu0": mu0, "mu": mu}
    c, d = RED_TABLE.num_states, RED_TABLE.age_dim
    q = sp.zeros(c, c)
    for s, sym, t, _ in RED_TABLE.rows:
        r = RED_TABLE.rate(sym, values)
        q[s, t] += r
        q[s, s] -= r
    a = q.T
    a[c - 1, :] = sp.ones(1, c)
    b = sp.zeros(c, 1)
    b[c - 1] = 1
    pi = a.LUsolve(b)
    m = sp.zeros(c * d, c * d)
    for s, sym, t, reset in RED_TABLE.rows:
        r = RED_TABLE.rate(sym, values)
        for k in range(d):
            m[s * d + k, s * d + k] += r
        for k, j in enumerate(reset.sources):
            if j is not None:
                m[t * d + k, s * d + j] -= r
    rhs = sp.Matrix([pi[s] for s in range(c) for _ in range(d)])
    v = m.LUsolve(rhs)
    return sum(v[s * d] for s in range(c))


def check_red_closed_form(points: int = 12, seed: int = 0) -> list[Discrepancy]:
    """Exact rational comparison of the (corrected) closed form with the
    table pipeline at random rational points."""
    rng = random.Random(seed)
    found = []
    for _ in range(points):
        args = [sp.Rational(rng.randint(1, 200), rng.randint(1, 20)) for _ in range(5)]
        args[1] = sp.Rational(rng.randint(0, 100), 100)
        a = red_closed_form_exact(*args)
        b = red_pipeline_exact(*args)
        if sp.simplify(a - b) != 0:
            found.append(Discrepancy("red closed form", f"point {tuple(args)}", str(a), str(b), str(a - b)))
    return found


def full_report() -> dict:
    return {
        "red_balance": red_report(),
        "yg_balance": yg_report(),
        "red_closed_form": check_red_closed_form(),
        "notes": [RED_CLOSED_FORM_NOTE],
    }
