"""Solution-quality metrics: KKT residuals, duality gap, approximation bounds, rates."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import regularizers as reg
from .core import ProblemError, ProblemInstance, SolveResult, SolverConfig, TransportPlan
from .exact import ExactOTResult
from .objectives import (
    conjugate_terms,
    dual_objective,
    marginal_arguments,
    primal_objective,
    regularizer_values,
    transport_cost,
)
from .solver import feasibility_error

__all__ = [
    "SUPPORT_TOL",
    "DiagnosticsReport",
    "Prop2Report",
    "kkt_report",
    "check_prop2_bounds",
    "rate_fit",
    "support_containment",
    "support_size",
]

SUPPORT_TOL = 1e-10


@dataclass(frozen=True)
class DiagnosticsReport:
    """Residuals of a DROT solution.

    ``marginal_dev_a = a - P 1`` and ``marginal_dev_b = b - P^T 1`` are
    signed: positive entries are destroyed mass, negative entries created
    mass. ``mass_created``/``mass_destroyed`` refer to the ``a`` side, the
    ``_b`` variants to the ``b`` side.
    """

    kkt_stationarity_f: float
    kkt_stationarity_g: float
    complementary_slackness: float
    duality_gap: float
    feasibility_error: float
    marginal_dev_a: np.ndarray
    marginal_dev_b: np.ndarray
    mass_created: float
    mass_destroyed: float
    mass_created_b: float
    mass_destroyed_b: float
    support_size: int
    primal_objective: float
    dual_objective: float

    def to_dict(self):
        d = asdict(self)
        d["marginal_dev_a"] = self.marginal_dev_a.tolist()
        d["marginal_dev_b"] = self.marginal_dev_b.tolist()
        return d

    def violations(self, gamma, tol=1e-6, feasibility_tol=1e-8):
        """Names of residuals outside the acceptance tolerances."""
        bad = []
        if not self.kkt_stationarity_f <= tol * gamma:
            bad.append("kkt_stationarity_f")
        if not self.kkt_stationarity_g <= tol * gamma:
            bad.append("kkt_stationarity_g")
        if not self.complementary_slackness <= tol:
            bad.append("complementary_slackness")
        if not self.duality_gap <= tol * (1.0 + abs(self.primal_objective)):
            bad.append("duality_gap")
        if not self.feasibility_error <= feasibility_tol:
            bad.append("feasibility_error")
        return bad


def support_size(plan: TransportPlan, tol=SUPPORT_TOL) -> int:
    return int(np.count_nonzero(plan.values > tol))


def _grad_side(spec, v, log_v):
    if spec.kind == "entropy":
        return np.asarray(log_v) if log_v is not None else reg.grad(spec, v)
    return reg.grad(spec, v)


def kkt_report(problem: ProblemInstance, config: SolverConfig, result: SolveResult) -> DiagnosticsReport:
    """Fill a :class:`DiagnosticsReport` from a solution.

    Stationarity compares ``gamma (a - P 1 + c1)`` with ``grad phi(f)``;
    ``c1`` (entropy only) is the multiplier of ``f >= 0`` and stays zero for
    interior solutions.
    """
    C = config.effective_cost(problem.C)
    a, b = np.asarray(problem.a), np.asarray(problem.b)
    pots, plan = result.potentials, result.plan
    x, y = marginal_arguments(a, b, plan, config, pots.c1, pots.c2)
    sf = float(np.max(np.abs(x - _grad_side(config.phi, pots.f, pots.log_f))))
    sg = float(np.max(np.abs(y - _grad_side(config.varphi, pots.g, pots.log_g))))
    if plan.nnz:
        slack = C[plan.rows, plan.cols] - pots.f[plan.rows] - pots.g[plan.cols]
        cs = float(np.max(np.abs(plan.values * slack)))
    else:
        cs = 0.0
    primal = primal_objective(a, b, pots, config)
    dual = dual_objective(C, a, b, plan, config, pots.c1, pots.c2)
    dev_a = a - plan.row_sums()
    dev_b = b - plan.col_sums()
    return DiagnosticsReport(
        kkt_stationarity_f=sf,
        kkt_stationarity_g=sg,
        complementary_slackness=cs,
        duality_gap=abs(dual - primal),
        feasibility_error=feasibility_error(pots, C, config.gamma),
        marginal_dev_a=dev_a,
        marginal_dev_b=dev_b,
        mass_created=float(np.sum(np.maximum(-dev_a, 0.0))),
        mass_destroyed=float(np.sum(np.maximum(dev_a, 0.0))),
        mass_created_b=float(np.sum(np.maximum(-dev_b, 0.0))),
        mass_destroyed_b=float(np.sum(np.maximum(dev_b, 0.0))),
        support_size=support_size(plan),
        primal_objective=primal,
        dual_objective=dual,
    )


@dataclass(frozen=True)
class Prop2Report:
    """Signed margins of the three OT-vs-DROT inequality chains.

    A margin is ``rhs - lhs`` (nonnegative when the inequality holds); a chain
    passes when every margin is ``>= -slack``.
    """

    ot: float
    drot: float
    lower_margin: float
    upper_margin: float
    cost_bound_margin: float
    conjugate_bound_margin: float
    cost_gap: float
    conjugate_gap: float
    slack: float
    dual_shift: float

    @property
    def part1(self) -> bool:
        return self.lower_margin >= -self.slack and self.upper_margin >= -self.slack

    @property
    def part2(self) -> bool:
        return self.cost_bound_margin >= -self.slack

    @property
    def part3(self) -> bool:
        return self.conjugate_bound_margin >= -self.slack

    @property
    def passed(self) -> bool:
        return self.part1 and self.part2 and self.part3

    def to_dict(self):
        d = asdict(self)
        d.update(part1=self.part1, part2=self.part2, part3=self.part3, passed=self.passed)
        return d


def _safe_value(spec, v):
    try:
        return reg.value(spec, v)
    except reg.DomainError:
        return np.inf


def _best_exact_duals(exact: ExactOTResult, config: SolverConfig):
    """Shift ``(f* + s, g* - s)`` (still LP-optimal) minimising ``phi(f*) + varphi(g*)``."""
    f, g = np.asarray(exact.dual_f), np.asarray(exact.dual_g)

    def total(s):
        return _safe_value(config.phi, f + s) + _safe_value(config.varphi, g - s)

    if config.phi.kind == config.varphi.kind == "quadratic":
        s = (g.sum() - f.sum()) / (f.size + g.size)
    else:
        span = 1.0 + float(np.abs(f).max() + np.abs(g).max())
        lo, hi = -span, span
        if config.phi.kind == "entropy":
            lo = max(lo, -float(f.min()))
        if config.varphi.kind == "entropy":
            hi = min(hi, float(g.min()))
        if lo > hi:
            return 0.0, total(0.0)
        res = minimize_scalar(total, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        s = float(res.x) if total(res.x) <= total(0.0) else 0.0
    return s, total(s)


def check_prop2_bounds(problem: ProblemInstance, exact: ExactOTResult, drot: SolveResult,
                       config: SolverConfig, slack=None) -> Prop2Report:
    """Evaluate the OT-vs-DROT bounds at a pair of solutions.

    With ``G = gamma``, ``(f_G, g_G, P_G)`` the DROT solution and
    ``(f*, g*, P*)`` an exact LP solution:

    1. ``phi(f_G) + varphi(g_G) <= G (OT - DROT) <= phi(f*) + varphi(g*)``
    2. ``G <C, P* - P_G> <= phi(f*) + varphi(g*) + phi*(G (a - P_G 1)) + varphi*(G (b - P_G^T 1))``
    3. ``phi*(G (a - P_G 1)) + varphi*(...) <= G <C, P* - P_G> - phi(f_G) - varphi(g_G)``

    Any optimal LP dual pair is admissible; the pair is shifted by the
    constant that makes ``phi(f*) + varphi(g*)`` smallest. Failures are
    reported through the margins, never raised. ``slack`` defaults to
    ``1e-8 * gamma``.
    """
    C = config.effective_cost(problem.C)
    a, b = np.asarray(problem.a), np.asarray(problem.b)
    G = config.gamma
    slack = 1e-8 * G if slack is None else slack
    ot = transport_cost(C, exact.plan)
    drot_value = drot.primal_objective
    vf, vg = regularizer_values(drot.potentials, config)
    reg_drot = vf + vg
    shift, reg_exact = _best_exact_duals(exact, config)
    tf, tg = conjugate_terms(a, b, drot.plan, config, drot.potentials.c1, drot.potentials.c2)
    conj = G * (tf + tg)
    cost_gap = ot - transport_cost(C, drot.plan)
    gap = G * (ot - drot_value)
    return Prop2Report(
        ot=ot,
        drot=drot_value,
        lower_margin=gap - reg_drot,
        upper_margin=reg_exact - gap,
        cost_bound_margin=reg_exact + conj - G * cost_gap,
        conjugate_bound_margin=G * cost_gap - reg_drot - conj,
        cost_gap=cost_gap,
        conjugate_gap=tf + tg,
        slack=slack,
        dual_shift=float(shift),
    )


def rate_fit(gammas, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(gamma)``."""
    g = np.asarray(gammas, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    if g.shape != e.shape or g.ndim != 1 or g.size < 3:
        raise ValueError("need at least three (gamma, error) pairs")
    if np.any(g <= 0) or np.any(e <= 0):
        raise ValueError("gammas and errors must be positive")
    slope, _ = np.polyfit(np.log(g), np.log(e), 1)
    return float(slope)


def support_containment(drot_plan: TransportPlan, exact_plan: TransportPlan,
                        tol=SUPPORT_TOL) -> bool:
    """True iff every DROT entry above ``tol`` is also an exact-plan entry above ``tol``."""
    if drot_plan.shape != exact_plan.shape:
        raise ProblemError("plans have different shapes")
    return drot_plan.support(tol) <= exact_plan.support(tol)
