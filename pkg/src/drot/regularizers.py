"""Strictly convex potentials regularizing the DROT objective.

Three kinds are supported, each acting elementwise on a potential vector ``v``:

=============  ========================  ============  =================  ==========================
kind           phi(v)                    grad          grad inverse       conjugate phi*(x)
=============  ========================  ============  =================  ==========================
quadratic      sum v_i^2                 2 v           y / 2              sum x_i^2 / 4
exponential    sum exp(v_i)              exp(v)        log(y), y > 0      sum x_i log x_i - x_i, x >= 0
entropy        sum v_i log v_i - v_i     log(v)        exp(y)             sum exp(x_i)
=============  ========================  ============  =================  ==========================

The solver works with an *internal* representation ``r`` of each potential:
``r = v`` for quadratic and exponential, ``r = log v`` for entropy. In that
representation a Bregman step ``grad(v') = grad(v) + t`` has a cheap,
overflow-free form (see :func:`_step`). The scalar kernels below are compiled
with numba so the solver's inner loop can call them directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import xlogy

__all__ = [
    "KINDS",
    "RegularizerSpec",
    "DomainError",
    "ThetaError",
    "as_spec",
    "value",
    "grad",
    "grad_inverse",
    "conjugate",
    "conjugate_grad",
    "solve_theta",
    "project_pair",
    "apply_step",
]

KINDS = ("quadratic", "entropy", "exponential")

QUADRATIC = 0
ENTROPY = 1
EXPONENTIAL = 2

# status codes returned by the compiled theta kernel
OK = 0
NO_REAL_SOLUTION = 1
NO_CONVERGENCE = 2
NONPOSITIVE_COST = 3

ROOT_TOL = 1e-12
ROOT_MAX_ITER = 100


class DomainError(ValueError):
    """A vector lies outside the domain of a regularizer or its conjugate."""


class ThetaError(ArithmeticError):
    """The projection scalar could not be computed.

    Attributes ``i``, ``j`` and ``gamma`` locate the offending constraint when
    raised from inside the solver (``None`` otherwise).
    """

    def __init__(self, message, i=None, j=None, gamma=None):
        super().__init__(message)
        self.i = i
        self.j = j
        self.gamma = gamma


@dataclass(frozen=True)
class RegularizerSpec:
    """One of the three supported regularizers, selected by name."""

    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(
                f"unknown regularizer {self.kind!r}; expected one of {', '.join(KINDS)}"
            )

    @property
    def code(self) -> int:
        return KINDS.index(self.kind)

    @property
    def positive_cofinite_only(self) -> bool:
        """Exponential is only positive co-finite: DROT can then only destroy mass."""
        return self.kind == "exponential"

    def __str__(self):
        return self.kind


def as_spec(spec) -> RegularizerSpec:
    if isinstance(spec, RegularizerSpec):
        return spec
    return RegularizerSpec(str(spec))


# ---------------------------------------------------------------------------
# vector calculus
# ---------------------------------------------------------------------------


def _arr(v):
    return np.asarray(v, dtype=np.float64)


def value(spec, v) -> float:
    """Evaluate ``phi(v)``. Entropy uses the convention ``0 log 0 = 0``."""
    kind = as_spec(spec).kind
    v = _arr(v)
    if kind == "quadratic":
        return float(np.sum(v * v))
    if kind == "exponential":
        return float(np.sum(np.exp(v)))
    if np.any(v < 0):
        raise DomainError("entropy is only defined for nonnegative vectors")
    return float(np.sum(xlogy(v, v) - v))


def grad(spec, v) -> np.ndarray:
    kind = as_spec(spec).kind
    v = _arr(v)
    if kind == "quadratic":
        return 2.0 * v
    if kind == "exponential":
        return np.exp(v)
    if np.any(v <= 0):
        raise DomainError("entropy gradient needs strictly positive entries")
    return np.log(v)


def grad_inverse(spec, y) -> np.ndarray:
    """Return the unique ``v`` with ``grad(spec, v) == y`` (equivalently ``grad phi*(y)``)."""
    kind = as_spec(spec).kind
    y = _arr(y)
    if kind == "quadratic":
        return 0.5 * y
    if kind == "exponential":
        if np.any(y <= 0):
            raise DomainError("exponential gradient only takes positive values")
        return np.log(y)
    return np.exp(y)


conjugate_grad = grad_inverse


def conjugate(spec, x) -> float:
    """Evaluate the convex conjugate ``phi*(x)``."""
    kind = as_spec(spec).kind
    x = _arr(x)
    if kind == "quadratic":
        return float(np.sum(x * x) / 4.0)
    if kind == "entropy":
        return float(np.sum(np.exp(x)))
    if np.any(x < 0):
        raise DomainError("conjugate of the exponential needs x >= 0")
    return float(np.sum(xlogy(x, x) - x))


# ---------------------------------------------------------------------------
# compiled scalar kernels (internal representation r)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _potential(kind, r):
    if kind == ENTROPY:
        return math.exp(r)
    return r


@njit(cache=True)
def _step(kind, r, t):
    """Internal value after ``grad(v') = grad(v) + t``."""
    if kind == QUADRATIC:
        return r + 0.5 * t
    if kind == ENTROPY:
        return r + t
    # exponential: log(exp(r) + t), kept finite when exp(r) underflows
    if t == 0.0:
        return r
    if t > 0.0:
        lt = math.log(t)
        hi = max(r, lt)
        return hi + math.log1p(math.exp(-abs(r - lt)))
    lt = math.log(-t)
    if lt >= r:
        return -math.inf
    return r + math.log1p(-math.exp(lt - r))


@njit(cache=True)
def _dpotential(kind, r, t):
    """d/dt of the potential after a step of size t."""
    if kind == QUADRATIC:
        return 0.5
    if kind == ENTROPY:
        x = r + t
    else:
        x = -_step(kind, r, t)
    return math.exp(x) if x < 709.0 else math.inf


@njit(cache=True)
def _residual(kf, kg, rf, rg, c, t):
    return _potential(kf, _step(kf, rf, t)) + _potential(kg, _step(kg, rg, t)) - c


@njit(cache=True)
def _best_of(kf, kg, rf, rg, c, t, lo, hi):
    best = t
    err = abs(_residual(kf, kg, rf, rg, c, t))
    for cand in (lo, hi, np.nextafter(t, -math.inf), np.nextafter(t, math.inf)):
        e = abs(_residual(kf, kg, rf, rg, c, cand))
        if e < err:
            best, err = cand, e
    return best


@njit(cache=True)
def _midpoint(lo, hi):
    # geometric when the bracket spans many orders of magnitude on one side of zero
    if lo >= 0.0 and hi > 1e3 * max(lo, 1e-300):
        return math.sqrt(max(lo, 1e-300) * hi)
    if hi <= 0.0 and -lo > 1e3 * max(-hi, 1e-300):
        return -math.sqrt(max(-hi, 1e-300) * -lo)
    return 0.5 * (lo + hi)


@njit(cache=True)
def _solve_t_newton(kf, kg, rf, rg, c):
    """Safeguarded Newton in t for pairings without an exponential side."""
    h0 = _residual(kf, kg, rf, rg, c, 0.0)
    if h0 == 0.0:
        return 0.0, OK
    if not math.isfinite(h0):
        return math.nan, NO_REAL_SOLUTION
    lo = 0.0
    hi = 0.0
    found = False
    for k in range(0, 1100):
        x = 2.0 ** k
        if h0 > 0.0:
            lo = -x
            if _residual(kf, kg, rf, rg, c, lo) < 0.0:
                found = True
                break
        else:
            hi = x
            if _residual(kf, kg, rf, rg, c, hi) > 0.0:
                found = True
                break
    if not found:
        return math.nan, NO_CONVERGENCE
    t = 0.0
    for _ in range(ROOT_MAX_ITER):
        h = _residual(kf, kg, rf, rg, c, t)
        if abs(h) <= ROOT_TOL:
            return t, OK
        if h < 0.0:
            lo = t
        else:
            hi = t
        d = _dpotential(kf, rf, t) + _dpotential(kg, rg, t)
        tn = t - h / d if 0.0 < d < math.inf else math.nan
        if not (lo < tn < hi) or not math.isfinite(tn):
            tn = _midpoint(lo, hi)
        if tn == t or tn == lo or tn == hi:
            # bracket collapsed to adjacent floats: keep the best of them
            return _best_of(kf, kg, rf, rg, c, t, lo, hi), OK
        t = tn
    return math.nan, NO_CONVERGENCE


@njit(cache=True)
def _exp_residual(ko, re, ro, c, u):
    # u is the new exponential value; t = exp(u) - exp(re) is the shared step
    d = u - re
    t = math.exp(u) - math.exp(re) if d > 1.0 else math.exp(re) * math.expm1(d)
    return u + _potential(ko, _step(ko, ro, t)) - c, t


@njit(cache=True)
def _solve_u_exp_mixed(ko, re, ro, c):
    """Root in the new exponential value ``u`` for an exponential/other pairing.

    Working in ``u`` rather than ``t`` keeps the problem well conditioned when
    the exponential side collapses (``exp(u)`` much smaller than ``exp(re)``)
    and when it grows from a tiny value (the residual is then logarithmic in t).
    Returns ``(u, t, status)``.
    """
    h0, _ = _exp_residual(ko, re, ro, c, re)
    if h0 == 0.0:
        return re, 0.0, OK
    if not math.isfinite(h0):
        return math.nan, math.nan, NO_REAL_SOLUTION
    lo = re
    hi = re
    found = False
    for k in range(0, 1100):
        x = 2.0 ** k
        if h0 > 0.0:
            lo = re - x
            h, _ = _exp_residual(ko, re, ro, c, lo)
            if h < 0.0:
                found = True
                break
        else:
            # grow the step in t and map it to u: doubling u itself overflows
            hi = _step(EXPONENTIAL, re, x)
            h, _ = _exp_residual(ko, re, ro, c, hi)
            if h > 0.0:
                found = True
                break
    if not found:
        return math.nan, math.nan, NO_CONVERGENCE
    u = re
    best_u = re
    best_h = abs(h0)
    for _ in range(ROOT_MAX_ITER):
        h, t = _exp_residual(ko, re, ro, c, u)
        if not math.isfinite(h):
            h = math.inf
        if abs(h) < best_h:
            best_u, best_h = u, abs(h)
        if abs(h) <= ROOT_TOL:
            return u, t, OK
        if h < 0.0:
            lo = u
        else:
            hi = u
        d = 1.0 + _dpotential(ko, ro, t) * math.exp(u)
        un = u - h / d if d < math.inf else math.nan
        if not (lo < un < hi) or not math.isfinite(un):
            un = 0.5 * (lo + hi)
        if un == u or un == lo or un == hi:
            for cand in (lo, hi):
                hc, _ = _exp_residual(ko, re, ro, c, cand)
                if abs(hc) < best_h:
                    best_u, best_h = cand, abs(hc)
            _, t = _exp_residual(ko, re, ro, c, best_u)
            return best_u, t, OK
        u = un
    return math.nan, math.nan, NO_CONVERGENCE


@njit(cache=True)
def _project_full(kf, kg, rf, rg, c):
    """Full projection onto ``f_i + g_j = c`` in the internal representation.

    Returns ``(t, rf_new, rg_new, status)`` where ``t = gamma * theta`` and the
    new values are computed directly (not by re-applying ``t``), so they
    satisfy the equality to working precision even when ``t`` is ill
    conditioned.
    """
    if kf == QUADRATIC and kg == QUADRATIC:
        t = c - rf - rg
        return t, rf + 0.5 * t, rg + 0.5 * t, OK
    if kf == ENTROPY and kg == ENTROPY:
        if c <= 0.0:
            return math.nan, rf, rg, NONPOSITIVE_COST
        hi = max(rf, rg)
        lse = hi + math.log(math.exp(rf - hi) + math.exp(rg - hi))
        t = math.log(c) - lse
        return t, rf + t, rg + t, OK
    if kf == EXPONENTIAL and kg == EXPONENTIAL:
        ef = math.exp(rf)
        eg = math.exp(rg)
        efg = math.exp(rf + rg)
        ec = math.exp(c)
        disc = (ef - eg) ** 2 + 4.0 * ec
        if not (math.isfinite(disc) and math.isfinite(efg)) or disc < 0.0:
            return math.nan, rf, rg, NO_REAL_SOLUTION
        # root of t^2 + (ef + eg) t + efg - e^c keeping exp(f'), exp(g') > 0,
        # written to avoid cancellation
        root = math.sqrt(disc)
        gap = c - rf - rg
        num = ec - efg if gap > 1.0 else efg * math.expm1(gap)
        t = 2.0 * num / (ef + eg + root)
        if not math.isfinite(t):
            return math.nan, rf, rg, NO_REAL_SOLUTION
        # the larger new value from the stable branch, the other from the product
        if ef >= eg:
            nf = math.log(0.5 * ((ef - eg) + root))
            return t, nf, c - nf, OK
        ng = math.log(0.5 * ((eg - ef) + root))
        return t, c - ng, ng, OK
    if kf == EXPONENTIAL or kg == EXPONENTIAL:
        # solve for the new exponential value, which stays well scaled whether
        # that side collapses or grows from a tiny value
        if kf == EXPONENTIAL:
            u, t, st = _solve_u_exp_mixed(kg, rf, rg, c)
            if st != OK:
                return math.nan, rf, rg, st
            return t, u, _step(kg, rg, t), OK
        u, t, st = _solve_u_exp_mixed(kf, rg, rf, c)
        if st != OK:
            return math.nan, rf, rg, st
        return t, _step(kf, rf, t), u, OK
    t, st = _solve_t_newton(kf, kg, rf, rg, c)
    if st != OK:
        return math.nan, rf, rg, st
    return t, _step(kf, rf, t), _step(kg, rg, t), OK


@njit(cache=True)
def _solve_t(kf, kg, rf, rg, c):
    """Solve for t = gamma * theta so that the projected pair is tight.

    Returns ``(t, status)``; ``status != OK`` signals failure.
    """
    t, _, _, st = _project_full(kf, kg, rf, rg, c)
    return t, st


_STATUS_MESSAGES = {
    NO_REAL_SOLUTION: "projection equation has no real solution in double precision "
    "(gamma too large for the exponential regularizer)",
    NO_CONVERGENCE: "root-finding for the projection scalar did not converge",
    NONPOSITIVE_COST: "entropy projection needs a strictly positive cost (use cost_shift)",
}


def status_message(status: int) -> str:
    return _STATUS_MESSAGES.get(status, f"theta kernel status {status}")


def to_internal(spec, v):
    """Map potentials to the solver's internal representation."""
    v = _arr(v)
    if as_spec(spec).kind == "entropy":
        if np.any(v <= 0):
            raise DomainError("entropy potentials must be strictly positive")
        return np.log(v)
    return v.copy()


def from_internal(spec, r):
    r = _arr(r)
    if as_spec(spec).kind == "entropy":
        with np.errstate(over="ignore"):
            return np.exp(r)
    return r.copy()


def solve_theta(phi, varphi, f_i, g_j, C_ij, gamma) -> float:
    """Projection scalar for the constraint ``f_i + g_j <= C_ij``.

    The step convention is ``(grad phi(f') - grad phi(f)) / gamma = theta``
    (same for ``g``), and ``theta`` is the unique value for which the stepped
    potentials satisfy ``f'_i + g'_j = C_ij``. It is negative when the
    constraint is violated, positive when slack and zero when tight.

    Raises
    ------
    ThetaError
        If no real solution exists in double precision or root-finding fails.
    """
    phi, varphi = as_spec(phi), as_spec(varphi)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    rf = float(to_internal(phi, [f_i])[0])
    rg = float(to_internal(varphi, [g_j])[0])
    t, status = _solve_t(phi.code, varphi.code, rf, rg, float(C_ij))
    if status != OK:
        raise ThetaError(status_message(status), gamma=gamma)
    return t / gamma


def project_pair(phi, varphi, f_i, g_j, C_ij, gamma):
    """Full projection onto ``f_i + g_j = C_ij``: returns ``(theta, f_new, g_new)``.

    The new potentials come straight from the root-finder, so they stay
    accurate even where re-applying ``theta`` through :func:`apply_step`
    would amplify its rounding.
    """
    phi, varphi = as_spec(phi), as_spec(varphi)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    rf = float(to_internal(phi, [f_i])[0])
    rg = float(to_internal(varphi, [g_j])[0])
    t, nf, ng, status = _project_full(phi.code, varphi.code, rf, rg, float(C_ij))
    if status != OK:
        raise ThetaError(status_message(status), gamma=gamma)
    return (t / gamma, float(from_internal(phi, [nf])[0]), float(from_internal(varphi, [ng])[0]))


def apply_step(spec, v: float, step: float) -> float:
    """Potential after the Bregman update ``grad(v') = grad(v) + step``."""
    spec = as_spec(spec)
    r = float(to_internal(spec, [v])[0])
    r2 = _step(spec.code, r, float(step))
    if r2 == -math.inf:
        raise DomainError("step leaves the range of the exponential gradient")
    return float(from_internal(spec, [r2])[0])
