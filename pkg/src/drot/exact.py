"""Reference solvers: exact transport LP and a dense solver for the DROT dual."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import regularizers as reg
from .core import (
    DualPotentials,
    ProblemError,
    ProblemInstance,
    SolveResult,
    SolverConfig,
    TransportPlan,
)
from .objectives import dual_objective, marginal_arguments, primal_objective
from .solver import feasibility_error

__all__ = ["ExactOTResult", "solve_exact_ot", "solve_drot_dense_oracle"]


@dataclass(frozen=True)
class ExactOTResult:
    plan: TransportPlan
    cost: float
    dual_f: np.ndarray
    dual_g: np.ndarray
    pivots: int = 0


def _northwest_corner(a, b):
    m, n = a.size, b.size
    s, d = a.copy(), b.copy()
    i = j = 0
    cells, flows = [], []
    while i < m and j < n:
        x = min(s[i], d[j])
        cells.append((i, j))
        flows.append(x)
        s[i] -= x
        d[j] -= x
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif s[i] <= d[j]:
            i += 1
        else:
            j += 1
    # m + n - 1 cells forming a staircase spanning tree
    return cells, flows


class _Tree:
    """Spanning tree of the bipartite graph: rows are nodes 0..m-1, columns m..m+n-1."""

    def __init__(self, m, n, cells, flows):
        self.m, self.n = m, n
        self.flow = {cell: x for cell, x in zip(cells, flows)}
        self.adj = [set() for _ in range(m + n)]
        for i, j in cells:
            self.adj[i].add(m + j)
            self.adj[m + j].add(i)

    def add(self, i, j, x):
        self.flow[(i, j)] = x
        self.adj[i].add(self.m + j)
        self.adj[self.m + j].add(i)

    def remove(self, i, j):
        del self.flow[(i, j)]
        self.adj[i].discard(self.m + j)
        self.adj[self.m + j].discard(i)

    def potentials(self, C):
        m = self.m
        pot = np.zeros(m + self.n)
        seen = np.zeros(m + self.n, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for w in self.adj[u]:
                if not seen[w]:
                    seen[w] = True
                    # u_i + v_j = C_ij on tree arcs
                    pot[w] = C[u, w - m] - pot[u] if u < m else C[w, u - m] - pot[u]
                    queue.append(w)
        return pot[:m], pot[m:]

    def path(self, src, dst):
        parent = {src: None}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if u == dst:
                break
            for w in self.adj[u]:
                if w not in parent:
                    parent[w] = u
                    queue.append(w)
        nodes = [dst]
        while nodes[-1] != src:
            nodes.append(parent[nodes[-1]])
        return nodes[::-1]


def solve_exact_ot(problem: ProblemInstance, *, max_pivots=None) -> ExactOTResult:
    """Exact optimal transport by the network simplex method.

    Pricing is Dantzig's rule; after a degenerate pivot it switches to Bland's
    rule (first eligible arc in row-major order, smallest-index leaving arc)
    until the objective strictly decreases again, which rules out cycling.
    Dual potentials come from the final basis, normalised by ``f_0 = 0``.
    """
    a = np.asarray(problem.a, dtype=np.float64)
    b = np.asarray(problem.b, dtype=np.float64)
    C = np.asarray(problem.C, dtype=np.float64)
    m, n = C.shape
    ta, tb = a.sum(), b.sum()
    if abs(ta - tb) > 1e-12 * max(1.0, ta):
        raise ProblemError(f"unbalanced masses: {ta!r} vs {tb!r}")
    if m == 0 or n == 0:
        raise ProblemError("empty problem")

    tree = _Tree(m, n, *_northwest_corner(a, b))
    eps = 64 * np.finfo(np.float64).eps * max(1.0, float(np.abs(C).max())) * (m + n)
    if max_pivots is None:
        max_pivots = 50 * (m * n + m + n) + 1000
    bland = False
    pivots = 0
    while True:
        u, v = tree.potentials(C)
        red = C - u[:, None] - v[None, :]
        if bland:
            cand = np.flatnonzero(red.ravel() < -eps)
            if cand.size == 0:
                break
            k = int(cand[0])
        else:
            k = int(np.argmin(red))
            if red.flat[k] >= -eps:
                break
        if pivots >= max_pivots:
            raise RuntimeError("network simplex exceeded its pivot budget")
        i, j = divmod(k, n)
        # cycle: entering arc (i, j), then the tree path from column j back to row i
        nodes = tree.path(m + j, i)
        arcs = []
        for x, y in zip(nodes[:-1], nodes[1:]):
            arcs.append((x, y - m) if x < m else (y, x - m))
        minus = arcs[0::2]
        plus = arcs[1::2]
        theta = min(tree.flow[c] for c in minus)
        leaving = min((c for c in minus if tree.flow[c] == theta), key=lambda c: c[0] * n + c[1])
        for c in minus:
            tree.flow[c] -= theta
        for c in plus:
            tree.flow[c] += theta
        tree.remove(*leaving)
        tree.add(i, j, theta)
        bland = theta == 0.0
        pivots += 1

    u, v = tree.potentials(C)
    cells = sorted(c for c, x in tree.flow.items() if x > 0)
    plan = TransportPlan(
        m, n,
        np.array([c[0] for c in cells], dtype=np.int64),
        np.array([c[1] for c in cells], dtype=np.int64),
        np.array([tree.flow[c] for c in cells], dtype=np.float64),
    )
    cost = float(np.sum(C[plan.rows, plan.cols] * plan.values))
    return ExactOTResult(plan, cost, u, v, pivots)


# ---------------------------------------------------------------------------
# dense projected-gradient oracle for the DROT dual
# ---------------------------------------------------------------------------


def _dense_objective(C, a, b, P, config):
    try:
        return dual_objective(C, a, b, P, config)
    except reg.DomainError:
        return np.inf


def _dense_gradient(C, a, b, P, config):
    x, y = marginal_arguments(a, b, P, config)
    gx = reg.conjugate_grad(config.phi, x)
    gy = reg.conjugate_grad(config.varphi, y)
    return C - gx[:, None] - gy[None, :]


def _exp_domain_ok(config, x, y):
    if config.phi.kind == "exponential" and np.any(x <= 0):
        return False
    if config.varphi.kind == "exponential" and np.any(y <= 0):
        return False
    return True


def solve_drot_dense_oracle(problem: ProblemInstance, config: SolverConfig,
                            step_budget: int = 200_000, tol: float = 1e-10,
                            initial_plan=None) -> SolveResult:
    """Projected gradient descent on the dense DROT dual over ``P >= 0``.

    Minimises ``<C, P> + phi*(gamma (a - P 1)) / gamma + varphi*(gamma (b - P^T 1)) / gamma``
    with a backtracking line search along the projection arc that checks both
    sufficient decrease and the local curvature of the gradient. Steps
    leaving the domain of the exponential conjugate are rejected by the line
    search. Stops when the gradient mapping has Euclidean norm ``<= tol`` or
    after ``step_budget`` iterations (then ``converged`` is False).
    ``initial_plan`` (a TransportPlan or dense array) replaces the zero start;
    it must keep the exponential conjugate finite.

    The entropy nonnegativity multipliers are fixed at zero, where the dual
    objective attains its minimum over them.
    """
    C = config.effective_cost(problem.C)
    a, b = np.asarray(problem.a), np.asarray(problem.b)
    m, n = C.shape
    if initial_plan is None:
        P = np.zeros((m, n))
    else:
        P = initial_plan.to_dense() if hasattr(initial_plan, "to_dense") else np.array(initial_plan, dtype=np.float64)
        if P.shape != (m, n) or np.any(P < 0):
            raise ProblemError("initial plan must be a nonnegative matrix of the problem's shape")
    J = _dense_objective(C, a, b, P, config)
    step = 1.0 / config.gamma
    converged = False
    it = 0
    grad = _dense_gradient(C, a, b, P, config)
    for it in range(1, step_budget + 1):
        step *= 2.0
        while True:
            Pn = np.maximum(P - step * grad, 0.0)
            d = Pn - P
            dd = np.sum(d * d)
            x, y = marginal_arguments(a, b, Pn, config)
            if _exp_domain_ok(config, x, y):
                Jn = _dense_objective(C, a, b, Pn, config)
                gn = _dense_gradient(C, a, b, Pn, config)
                # the curvature test stays meaningful once objective changes
                # fall below rounding, where the decrease test alone lets the
                # iterates oscillate
                if (Jn <= J + np.sum(grad * d) + dd / (2.0 * step)
                        and np.sum((gn - grad) * d) <= dd / step):
                    break
            step *= 0.5
            if step < 1e-300:
                raise RuntimeError("line search failed in the dense oracle")
        gm = np.sqrt(dd) / step
        P, J, grad = Pn, Jn, gn
        if gm <= tol:
            converged = True
            break

    x, y = marginal_arguments(a, b, P, config)
    f = reg.conjugate_grad(config.phi, x)
    g = reg.conjugate_grad(config.varphi, y)
    log_f = x if config.phi.kind == "entropy" else None
    log_g = y if config.varphi.kind == "entropy" else None
    pots = DualPotentials(
        f, g,
        c1=np.zeros(m) if log_f is not None else None,
        c2=np.zeros(n) if log_g is not None else None,
        log_f=log_f, log_g=log_g,
    )
    plan = TransportPlan.from_dense(P)
    return SolveResult(
        potentials=pots,
        plan=plan,
        primal_objective=primal_objective(a, b, pots, config),
        dual_objective=dual_objective(C, a, b, plan, config),
        feasibility_error=feasibility_error(pots, C, config.gamma),
        sweeps=it,
        converged=converged,
    )
