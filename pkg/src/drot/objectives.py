"""Objective values of DROT and of its dual unbalanced transport problem."""

from __future__ import annotations

import numpy as np

from . import regularizers as reg
from .core import DualPotentials, SolverConfig, TransportPlan

# relative rounding slack when x = gamma (a - P 1) must be >= 0 (exponential conjugate)
_DOMAIN_SLACK = 1e-9


def _value_side(spec, v, log_v):
    if spec.kind == "entropy" and log_v is not None:
        # f log f - f written with the stored logarithm
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.sum(v * log_v - v))
    return reg.value(spec, v)


def regularizer_values(potentials: DualPotentials, config: SolverConfig):
    """``(phi(f), varphi(g))``."""
    return (
        _value_side(config.phi, potentials.f, potentials.log_f),
        _value_side(config.varphi, potentials.g, potentials.log_g),
    )


def primal_objective(a, b, potentials: DualPotentials, config: SolverConfig) -> float:
    """DROT objective ``<f, a> + <g, b> - (phi(f) + varphi(g)) / gamma``."""
    vf, vg = regularizer_values(potentials, config)
    return float(potentials.f @ a + potentials.g @ b - (vf + vg) / config.gamma)


def marginal_arguments(a, b, plan, config, c1=None, c2=None):
    """Conjugate arguments ``gamma (a - P 1 + c1)`` and ``gamma (b - P^T 1 + c2)``."""
    if isinstance(plan, TransportPlan):
        rs, cs = plan.row_sums(), plan.col_sums()
    else:
        P = np.asarray(plan, dtype=np.float64)
        rs, cs = P.sum(axis=1), P.sum(axis=0)
    x = config.gamma * (np.asarray(a) - rs + (0.0 if c1 is None else c1))
    y = config.gamma * (np.asarray(b) - cs + (0.0 if c2 is None else c2))
    return x, y


def _conjugate_side(spec, x, scale):
    if spec.kind == "exponential":
        slack = _DOMAIN_SLACK * scale
        if np.any(x < -slack):
            return np.inf
        x = np.maximum(x, 0.0)
    return reg.conjugate(spec, x)


def conjugate_terms(a, b, plan, config: SolverConfig, c1=None, c2=None):
    """``(phi*(x) / gamma, varphi*(y) / gamma)`` at the plan's marginal deviations."""
    x, y = marginal_arguments(a, b, plan, config, c1, c2)
    g = config.gamma
    return (
        _conjugate_side(config.phi, x, g * float(np.max(a))) / g,
        _conjugate_side(config.varphi, y, g * float(np.max(b))) / g,
    )


def transport_cost(C, plan) -> float:
    if isinstance(plan, TransportPlan):
        return float(np.sum(np.asarray(C)[plan.rows, plan.cols] * plan.values))
    return float(np.sum(np.asarray(C) * plan))


def dual_objective(C, a, b, plan, config: SolverConfig, c1=None, c2=None) -> float:
    """``<C, P> + phi*(gamma (a - P 1)) / gamma + varphi*(gamma (b - P^T 1)) / gamma``."""
    tf, tg = conjugate_terms(a, b, plan, config, c1, c2)
    return transport_cost(C, plan) + tf + tg
