"""Project-and-Forget solver for dual regularized optimal transport.

Each sweep runs three steps:

1. *oracle*: scan every constraint ``f_i + g_j <= C_ij`` and collect the
   violated ones in row-major order;
2. *project*: Bregman-project onto each violated constraint, then re-project
   every entry of the active set (the stored support of the plan ``P``), using
   the dual-corrected step ``c = min(P_ij, theta)``;
3. *forget*: drop active entries whose ``P_ij`` reached zero.

Throughout, ``grad phi(f) / gamma = a - P 1`` and the analogue for ``g`` hold
by construction, so the plan is always the multiplier of the active
constraints.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit

from . import regularizers as reg
from .core import (
    DualPotentials,
    ProblemError,
    ProblemInstance,
    SolveResult,
    SolverConfig,
    SweepStats,
    TransportPlan,
)
from .objectives import dual_objective, primal_objective
from .regularizers import (
    ENTROPY,
    EXPONENTIAL,
    OK,
    QUADRATIC,
    ThetaError,
    _potential,
    _project_full,
    _step,
)

__all__ = [
    "initialize",
    "oracle_scan",
    "project_constraint",
    "feasibility_error",
    "solve",
]

logger = logging.getLogger(__name__)

# the oracle ignores violations below this fraction of the stopping tolerance
ORACLE_FRACTION = 0.1
CHUNK_SWEEPS = 2000
_STAT_COLS = 5


def initial_internal(problem: ProblemInstance, config: SolverConfig):
    """Unconstrained maximiser: ``grad phi(f0) = gamma a``, ``grad varphi(g0) = gamma b``."""
    out = []
    for spec, w in ((config.phi, problem.a), (config.varphi, problem.b)):
        y = config.gamma * np.asarray(w, dtype=np.float64)
        if spec.kind == "quadratic":
            r = 0.5 * y
        elif spec.kind == "exponential":
            if np.any(y <= 0):
                raise ProblemError("gamma * weight underflows to zero; exponential needs it > 0")
            r = np.log(y)
        else:
            r = y.copy()  # log of exp(gamma a)
        if not np.all(np.isfinite(r)):
            raise ProblemError("initial potentials are not finite")
        out.append(r)
    return out[0], out[1]


def initialize(problem: ProblemInstance, config: SolverConfig):
    """Starting point of the solver: unconstrained optimum and empty plan."""
    config.effective_cost(problem.C)
    rf, rg = initial_internal(problem, config)
    pots = DualPotentials.from_internal(config.phi, config.varphi, rf, rg)
    return pots, TransportPlan.empty(*problem.shape)


def _effective_C(problem, config):
    if config is None:
        return np.asarray(problem.C)
    return config.effective_cost(problem.C)


def oracle_scan(problem: ProblemInstance, potentials: DualPotentials, tol=0.0, *,
                config: SolverConfig = None, workers: int = 1):
    """All ``(i, j)`` with ``f_i + g_j - C_ij > tol`` in row-major order.

    The scan is read-only; with ``workers > 1`` row blocks are scanned
    concurrently and merged in order.
    """
    C = _effective_C(problem, config)
    f = np.asarray(potentials.f)
    g = np.asarray(potentials.g)

    def block(lo, hi):
        with np.errstate(invalid="ignore"):
            viol = f[lo:hi, None] + g[None, :] - C[lo:hi] > tol
        r, c = np.nonzero(viol)
        return list(zip((r + lo).tolist(), c.tolist()))

    m = C.shape[0]
    workers = max(1, min(int(workers), m))
    if workers == 1:
        return block(0, m)
    edges = np.linspace(0, m, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        parts = ex.map(lambda k: block(edges[k], edges[k + 1]), range(workers))
        return [pair for part in parts for pair in part]


def feasibility_error(potentials: DualPotentials, C, gamma) -> float:
    """``max(0, max_ij (f_i + g_j - C_ij) / (2 gamma))``."""
    f = np.asarray(potentials.f)
    g = np.asarray(potentials.g)
    with np.errstate(invalid="ignore"):
        worst = np.max(f[:, None] + g[None, :] - np.asarray(C))
    if np.isnan(worst):
        return math.inf
    return max(0.0, float(worst) / (2.0 * gamma))


def project_constraint(potentials: DualPotentials, plan: TransportPlan, i, j, C_ij,
                       config: SolverConfig):
    """One dual-corrected Bregman projection onto ``f_i + g_j <= C_ij``.

    Returns the updated ``(potentials, plan)``; the entry is dropped from the
    plan when its value reaches zero.
    """
    phi, varphi, gamma = config.phi, config.varphi, config.gamma
    rf, rg = potentials.internal(phi, varphi)
    t, nf, ng, status = _project_full(phi.code, varphi.code, rf[i], rg[j], float(C_ij))
    if status != OK:
        raise ThetaError(reg.status_message(status), i=i, j=j, gamma=gamma)
    theta = t / gamma
    dense = {(r, c): v for r, c, v in zip(plan.rows.tolist(), plan.cols.tolist(),
                                            plan.values.tolist())}
    p = dense.get((i, j), 0.0)
    if theta <= p:
        newp = p - theta
        rf[i], rg[j] = nf, ng
    else:
        newp = 0.0
        rf[i] = _step(phi.code, rf[i], gamma * p)
        rg[j] = _step(varphi.code, rg[j], gamma * p)
    if not (np.isfinite(rf[i]) and np.isfinite(rg[j])):
        raise ThetaError(reg.status_message(reg.NO_REAL_SOLUTION), i=i, j=j, gamma=gamma)
    if newp > 0:
        dense[(i, j)] = newp
    else:
        dense.pop((i, j), None)
    keys = list(dense)
    new_plan = TransportPlan(
        plan.m, plan.n,
        np.array([k[0] for k in keys], dtype=np.int64),
        np.array([k[1] for k in keys], dtype=np.int64),
        np.array([dense[k] for k in keys], dtype=np.float64),
    )
    new_pots = DualPotentials.from_internal(phi, varphi, rf, rg, potentials.c1, potentials.c2)
    return new_pots, new_plan


# ---------------------------------------------------------------------------
# compiled sweep loop
# ---------------------------------------------------------------------------


@njit(cache=True)
def _value_sum(kind, r):
    s = 0.0
    for k in range(r.size):
        if kind == QUADRATIC:
            s += r[k] * r[k]
        elif kind == EXPONENTIAL:
            s += math.exp(r[k])
        else:
            v = math.exp(r[k])
            s += v * r[k] - v
    return s


@njit(cache=True)
def _primal(kf, kg, rf, rg, a, b, gamma):
    s = 0.0
    for i in range(rf.size):
        s += _potential(kf, rf[i]) * a[i]
    for j in range(rg.size):
        s += _potential(kg, rg[j]) * b[j]
    return s - (_value_sum(kf, rf) + _value_sum(kg, rg)) / gamma


@njit(cache=True)
def _relax_nonnegativity(r, c, gamma):
    # entropy keeps log f finite, so f_i >= 0 is never active: any multiplier
    # mass is returned to the potential and the multiplier drops to zero
    for k in range(r.size):
        if c[k] > 0.0:
            r[k] -= gamma * c[k]
            c[k] = 0.0


@njit(cache=True, nogil=True)
def _run_sweeps(rf, rg, C, a, b, kf, kg, gamma, tol, thr, limit,
                act_i, act_j, act_p, n_act, pos, viol_i, viol_j, c1, c2,
                stats, last_change):
    """Run up to ``limit`` sweeps in place.

    Returns ``(status, sweeps_done, n_act, converged, err_i, err_j, last_change)``.
    """
    m, n = C.shape
    F = np.empty(m)
    G = np.empty(n)
    for s in range(limit):
        for i in range(m):
            F[i] = _potential(kf, rf[i])
        for j in range(n):
            G[j] = _potential(kg, rg[j])

        # oracle
        nv = 0
        worst = -math.inf
        for i in range(m):
            fi = F[i]
            for j in range(n):
                v = fi + G[j] - C[i, j]
                if v > worst or v != v:
                    worst = v if v == v else math.inf
                if v > thr or v != v:
                    viol_i[nv] = i
                    viol_j[nv] = j
                    nv += 1
        feas = max(worst, 0.0) / (2.0 * gamma)
        if feas <= tol and last_change <= tol:
            return OK, s, n_act, True, -1, -1, last_change

        # project: newly violated constraints first, then the active set;
        # move is the largest single update, so moves that cancel over a sweep
        # (a cycle of active constraints still draining) block convergence
        move = 0.0
        total = nv + n_act
        for q in range(total):
            if q < nv:
                i = viol_i[q]
                j = viol_j[q]
                k = pos[i, j]
                p = act_p[k] if k >= 0 else 0.0
            else:
                k = q - nv
                i = act_i[k]
                j = act_j[k]
                p = act_p[k]
            t, ri, rj, st = _project_full(kf, kg, rf[i], rg[j], C[i, j])
            if st != OK:
                return st, s, n_act, False, i, j, last_change
            theta = t / gamma
            if theta <= p:
                newp = p - theta
            else:
                newp = 0.0
                ri = _step(kf, rf[i], gamma * p)
                rj = _step(kg, rg[j], gamma * p)
            if not (math.isfinite(ri) and math.isfinite(rj)):
                return 1, s, n_act, False, i, j, last_change
            d = max(abs(_potential(kf, ri) - _potential(kf, rf[i])),
                    abs(_potential(kg, rj) - _potential(kg, rg[j])))
            if not d <= move:
                move = d if d == d else math.inf
            rf[i] = ri
            rg[j] = rj
            if k >= 0:
                act_p[k] = newp
            elif newp > 0.0:
                act_i[n_act] = i
                act_j[n_act] = j
                act_p[n_act] = newp
                pos[i, j] = n_act
                n_act += 1

        if kf == ENTROPY:
            _relax_nonnegativity(rf, c1, gamma)
        if kg == ENTROPY:
            _relax_nonnegativity(rg, c2, gamma)

        # forget
        w = 0
        for k in range(n_act):
            if act_p[k] > 0.0:
                act_i[w] = act_i[k]
                act_j[w] = act_j[k]
                act_p[w] = act_p[k]
                pos[act_i[w], act_j[w]] = w
                w += 1
            else:
                pos[act_i[k], act_j[k]] = -1
        n_act = w

        # net change per entry, and the largest move on the feasibility scale
        change = move / (2.0 * gamma)
        for i in range(m):
            d = abs(_potential(kf, rf[i]) - F[i])
            if not d <= change:
                change = d if d == d else math.inf
        for j in range(n):
            d = abs(_potential(kg, rg[j]) - G[j])
            if not d <= change:
                change = d if d == d else math.inf
        last_change = change

        stats[s, 0] = nv
        stats[s, 1] = worst
        stats[s, 2] = feas
        stats[s, 3] = n_act
        stats[s, 4] = _primal(kf, kg, rf, rg, a, b, gamma)
    return OK, limit, n_act, False, -1, -1, last_change


def solve(problem: ProblemInstance, config: SolverConfig, *, record_history=False,
          potentials: DualPotentials = None) -> SolveResult:
    """Solve DROT with Project and Forget.

    Parameters
    ----------
    problem : ProblemInstance
    config : SolverConfig
    record_history : bool, optional
        Keep one :class:`SweepStats` per sweep in ``result.history``.
    potentials : DualPotentials, optional
        Warm start; defaults to the unconstrained optimum with an empty plan.

    Returns
    -------
    SolveResult
        ``converged`` is False when ``max_sweeps`` ran out; the result is
        still returned.

    Raises
    ------
    ThetaError
        If a projection scalar cannot be computed (exponential with very
        large ``gamma``); the message names the constraint and ``gamma``.
    """
    C = np.ascontiguousarray(config.effective_cost(problem.C))
    a = np.ascontiguousarray(problem.a)
    b = np.ascontiguousarray(problem.b)
    m, n = C.shape
    kf, kg = config.phi.code, config.varphi.code
    gamma = config.gamma
    if potentials is None:
        rf, rg = initial_internal(problem, config)
    else:
        rf, rg = potentials.internal(config.phi, config.varphi)
    rf = np.ascontiguousarray(rf, dtype=np.float64)
    rg = np.ascontiguousarray(rg, dtype=np.float64)

    act_i = np.empty(m * n, dtype=np.int64)
    act_j = np.empty(m * n, dtype=np.int64)
    act_p = np.empty(m * n)
    pos = np.full((m, n), -1, dtype=np.int64)
    viol_i = np.empty(m * n, dtype=np.int64)
    viol_j = np.empty(m * n, dtype=np.int64)
    c1 = np.zeros(m)
    c2 = np.zeros(n)
    n_act = 0
    tol = float(config.feasibility_tol)
    thr = 2.0 * gamma * tol * ORACLE_FRACTION
    last_change = math.inf
    done = 0
    converged = False
    history = []
    max_sweeps = int(config.max_sweeps)
    while done < max_sweeps:
        limit = min(CHUNK_SWEEPS, max_sweeps - done)
        stats = np.zeros((limit, _STAT_COLS))
        status, ran, n_act, converged, ei, ej, last_change = _run_sweeps(
            rf, rg, C, a, b, kf, kg, gamma, tol, thr, limit,
            act_i, act_j, act_p, n_act, pos, viol_i, viol_j, c1, c2,
            stats, last_change,
        )
        if record_history:
            history.extend(
                SweepStats(done + s + 1, int(row[0]), float(row[1]), float(row[2]),
                           int(row[3]), float(row[4]))
                for s, row in enumerate(stats[:ran])
            )
        done += ran
        if status != OK:
            raise ThetaError(
                f"{reg.status_message(status)} at constraint ({ei}, {ej}) with gamma={gamma:g}",
                i=int(ei), j=int(ej), gamma=gamma,
            )
        if converged:
            break
        logger.debug("sweep %d: active=%d change=%.3g", done, n_act, last_change)

    pots = DualPotentials.from_internal(config.phi, config.varphi, rf, rg, c1, c2)
    feas = feasibility_error(pots, C, gamma)
    if not converged:
        converged = feas <= tol and last_change <= tol
    plan = TransportPlan(m, n, act_i[:n_act].copy(), act_j[:n_act].copy(),
                         act_p[:n_act].copy())
    return SolveResult(
        potentials=pots,
        plan=plan,
        primal_objective=primal_objective(a, b, pots, config),
        dual_objective=dual_objective(C, a, b, plan, config, pots.c1, pots.c2),
        feasibility_error=feas,
        sweeps=done,
        converged=bool(converged),
        history=tuple(history),
    )


def default_workers() -> int:
    """Worker cap from ``DROT_THREADS`` (defaults to 1)."""
    try:
        return max(1, int(os.environ.get("DROT_THREADS", "1")))
    except ValueError:
        return 1
