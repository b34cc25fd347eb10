"""Sweep harness that regenerates the data behind the sparsity, rate, mass and timing figures."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import RNG_ALGORITHM, SolverConfig, gaussian_instance, random_simplex_instance
from .diagnostics import kkt_report, support_containment, support_size
from .exact import solve_exact_ot
from .objectives import conjugate_terms, transport_cost
from .regularizers import KINDS, ThetaError
from .solver import default_workers, solve

__all__ = ["ENTROPY_COST_SHIFT", "run_sparsity", "run_rate", "run_mass", "run_timing", "metadata"]

ENTROPY_COST_SHIFT = 1e-3


def _config(kind, gamma, tol, max_sweeps):
    return SolverConfig(
        gamma=gamma, phi=kind, varphi=kind, feasibility_tol=tol, max_sweeps=max_sweeps,
        cost_shift=ENTROPY_COST_SHIFT if kind == "entropy" else 0.0,
    )


def _solve_cell(problem, config):
    """``(result, status)``; status is ``ok``, ``not_converged`` or ``theta_failure``."""
    try:
        res = solve(problem, config)
    except ThetaError:
        return None, "theta_failure"
    return res, "ok" if res.converged else "not_converged"


def _map(fn, cells, workers):
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


def metadata(kind, seed, params):
    """Sidecar document: experiment name, seed, generator identity and parameters."""
    return {"experiment": kind, "seed": int(seed), "rng_algorithm": RNG_ALGORITHM, "parameters": dict(params)}


def run_sparsity(n=100, instances=1, seed=0, gammas=(1, 10, 100, 1000, 10000), kinds=KINDS,
                 tol=1e-8, max_sweeps=1_000_000, workers=None):
    """Support size of DROT plans against the exact plan on random simplex instances."""
    problems = [random_simplex_instance(n, seed=seed + k) for k in range(instances)]
    exact = [solve_exact_ot(p) for p in problems]
    cells = [(k, kind, g) for k in range(instances) for kind in kinds for g in gammas]

    def cell(c):
        k, kind, g = c
        res, status = _solve_cell(problems[k], _config(kind, g, tol, max_sweeps))
        ex = exact[k]
        row = {"instance": k, "regularizer": kind, "gamma": float(g), "status": status,
               "nnz": "", "exact_nnz": support_size(ex.plan), "contained": "", "sweeps": ""}
        if res is not None:
            row.update(nnz=support_size(res.plan), contained=int(support_containment(res.plan, ex.plan)),
                       sweeps=res.sweeps)
        return row

    return _map(cell, cells, workers)


def run_rate(n=101, gammas=(10, 100, 1000, 10000), kinds=("quadratic",), cost="ones",
             tol=1e-8, max_sweeps=1_000_000, workers=None):
    """Approximation errors against exact OT on the Gaussian instance."""
    problem = gaussian_instance(n, cost=cost)
    ex = solve_exact_ot(problem)
    cells = [(kind, g) for kind in kinds for g in gammas]

    def cell(c):
        kind, g = c
        cfg = _config(kind, g, tol, max_sweeps)
        res, status = _solve_cell(problem, cfg)
        row = {"regularizer": kind, "gamma": float(g), "status": status, "ot_minus_drot": "",
               "cost_gap_abs": "", "conjugate_gap": "", "marginal_norm_a": "", "marginal_norm_b": ""}
        if res is not None:
            C = cfg.effective_cost(problem.C)
            ot = transport_cost(C, ex.plan)
            tf, tg = conjugate_terms(problem.a, problem.b, res.plan, cfg,
                                     res.potentials.c1, res.potentials.c2)
            row.update(
                ot_minus_drot=ot - res.primal_objective,
                cost_gap_abs=abs(ot - transport_cost(C, res.plan)),
                conjugate_gap=tf + tg,
                marginal_norm_a=float(np.linalg.norm(problem.a - res.plan.row_sums())),
                marginal_norm_b=float(np.linalg.norm(problem.b - res.plan.col_sums())),
            )
        return row

    return _map(cell, cells, workers)


def run_mass(n=100, instances=1, seed=0, gammas=(10, 100, 1000), kinds=KINDS,
             tol=1e-8, max_sweeps=1_000_000, workers=None):
    """Signed marginal deviations, one row per cell with one column per atom."""
    problems = [random_simplex_instance(n, seed=seed + k) for k in range(instances)]
    cells = [(k, kind, g) for k in range(instances) for kind in kinds for g in gammas]

    def cell(c):
        k, kind, g = c
        cfg = _config(kind, g, tol, max_sweeps)
        res, status = _solve_cell(problems[k], cfg)
        row = {"instance": k, "regularizer": kind, "gamma": float(g), "status": status,
               "mass_created": "", "mass_destroyed": "", "mass_created_b": "", "mass_destroyed_b": ""}
        dev_a = dev_b = [""] * n
        if res is not None:
            rep = kkt_report(problems[k], cfg, res)
            row.update(mass_created=rep.mass_created, mass_destroyed=rep.mass_destroyed,
                       mass_created_b=rep.mass_created_b, mass_destroyed_b=rep.mass_destroyed_b)
            dev_a, dev_b = rep.marginal_dev_a.tolist(), rep.marginal_dev_b.tolist()
        row.update({f"dev_a_{i}": v for i, v in enumerate(dev_a)})
        row.update({f"dev_b_{j}": v for j, v in enumerate(dev_b)})
        return row

    return _map(cell, cells, workers)


def run_timing(sizes=(101, 501), gammas=(1000,), kinds=("quadratic",), tol=1e-8,
               max_sweeps=1_000_000):
    """Wall-clock time of Project and Forget on Gaussian instances (run serially)."""
    rows = []
    for n in sizes:
        problem = gaussian_instance(n)
        for kind in kinds:
            for g in gammas:
                cfg = _config(kind, g, tol, max_sweeps)
                t0 = time.perf_counter()
                res, status = _solve_cell(problem, cfg)
                elapsed = time.perf_counter() - t0
                rows.append({
                    "n": n, "regularizer": kind, "gamma": float(g), "status": status,
                    "seconds": elapsed,
                    "sweeps": "" if res is None else res.sweeps,
                    "feasibility_error": "" if res is None else res.feasibility_error,
                    "primal_objective": "" if res is None else res.primal_objective,
                })
    return rows
