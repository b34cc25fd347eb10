"""``drot`` command line: solve, verify, experiment, color-transfer.

Exit codes: 0 success, 1 input error, 2 solver non-convergence or theta
failure, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments, io
from .core import ProblemError, SolveResult, SolverConfig
from .diagnostics import check_prop2_bounds, kkt_report
from .exact import solve_exact_ot
from .objectives import dual_objective, primal_objective
from .regularizers import KINDS, ThetaError
from .solver import feasibility_error, solve

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2
EXIT_VERIFY = 3


def _err(msg):
    print(f"drot: {msg}", file=sys.stderr)


def _sidecar(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _kinds(text):
    kinds = tuple(k.strip() for k in text.split(",") if k.strip())
    bad = [k for k in kinds if k not in KINDS]
    if bad or not kinds:
        raise argparse.ArgumentTypeError(f"regularizers must be among {', '.join(KINDS)}")
    return kinds


def _add_solver_flags(p, gamma_required=True, default_shift=0.0):
    p.add_argument("--phi", choices=KINDS, default="quadratic")
    p.add_argument("--varphi", choices=KINDS, default="quadratic")
    p.add_argument("--gamma", type=float, required=gamma_required)
    p.add_argument("--tol", type=float, default=1e-8, help="feasibility tolerance")
    p.add_argument("--max-sweeps", type=int, default=100_000)
    p.add_argument("--cost-shift", type=float, default=default_shift,
                   help="added to costs when a side uses entropy")


def _config(args, cost_shift=None):
    return SolverConfig(
        gamma=args.gamma, phi=args.phi, varphi=args.varphi, feasibility_tol=args.tol,
        max_sweeps=args.max_sweeps,
        cost_shift=args.cost_shift if cost_shift is None else cost_shift,
    )


def cmd_solve(args) -> int:
    try:
        problem = io.load_problem(args.problem)
        config = _config(args)
        config.effective_cost(problem.C)
    except (io.InputError, ProblemError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        result = solve(problem, config)
    except ThetaError as exc:
        _err(f"theta step failed: {exc}")
        return EXIT_SOLVER
    report = kkt_report(problem, config, result)
    out = Path(args.out)
    io.save_plan(result.plan, out)
    io.save_json(io.summary_dict(result, report, config), _sidecar(out, ".summary.json"))
    io.save_potentials(result.potentials, _sidecar(out, ".potentials.json"), config)
    if not result.converged:
        _err(f"no convergence after {result.sweeps} sweeps "
             f"(feasibility error {result.feasibility_error:.3e})")
        return EXIT_SOLVER
    print(f"converged in {result.sweeps} sweeps; primal {result.primal_objective!r}, "
          f"nnz {result.plan.nnz}; wrote {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        problem = io.load_problem(args.problem)
        pots, stored = io.load_potentials(args.potentials)
        plan = io.load_plan(args.plan, problem.shape)
        if args.gamma is not None:
            config = _config(args)
        elif stored is not None:
            config = stored
        else:
            raise io.InputError("no solver configuration: pass --gamma or a potentials file with one")
        if pots.f.shape != (problem.shape[0],) or pots.g.shape != (problem.shape[1],):
            raise io.InputError(
                f"potential lengths {pots.f.size}, {pots.g.size} do not match problem shape {problem.shape}")
        C = config.effective_cost(problem.C)
    except (io.InputError, ProblemError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    a, b = np.asarray(problem.a), np.asarray(problem.b)
    result = SolveResult(
        potentials=pots, plan=plan,
        primal_objective=primal_objective(a, b, pots, config),
        dual_objective=dual_objective(C, a, b, plan, config, pots.c1, pots.c2),
        feasibility_error=feasibility_error(pots, C, config.gamma),
        sweeps=0, converged=True,
    )
    report = kkt_report(problem, config, result)
    failed = report.violations(config.gamma, tol=args.kkt_tol, feasibility_tol=config.feasibility_tol)
    doc = {"report": report.to_dict(), "failed": failed, "config": io.config_to_dict(config)}
    if args.exact:
        try:
            exact = solve_exact_ot(problem)
        except ProblemError as exc:
            _err(f"--exact needs a balanced instance: {exc}")
            return EXIT_INPUT
        prop2 = check_prop2_bounds(problem, exact, result, config)
        doc["prop2"] = prop2.to_dict()
        if not prop2.passed:
            failed.append("prop2_bounds")
    print(json.dumps(io._plain(doc), indent=2, sort_keys=True))
    if failed:
        _err("verification failed: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def _write_csv(rows, path):
    if not rows:
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def cmd_experiment(args) -> int:
    common = {"tol": args.tol, "max_sweeps": args.max_sweeps}
    kind = args.experiment
    if kind == "sparsity":
        params = dict(n=args.n or 100, instances=args.instances, seed=args.seed,
                      gammas=args.gammas or (1, 10, 100, 1000, 10000),
                      kinds=args.regularizers or KINDS, **common)
        rows = experiments.run_sparsity(**params)
    elif kind == "rate":
        params = dict(n=args.n or 101, gammas=args.gammas or (10, 100, 1000, 10000),
                      kinds=args.regularizers or ("quadratic",), cost=args.cost, **common)
        rows = experiments.run_rate(**params)
    elif kind == "mass":
        params = dict(n=args.n or 100, instances=args.instances, seed=args.seed,
                      gammas=args.gammas or (10, 100, 1000),
                      kinds=args.regularizers or KINDS, **common)
        rows = experiments.run_mass(**params)
    else:
        params = dict(sizes=args.sizes or ((args.n,) if args.n else (101, 501)),
                      gammas=args.gammas or (1000,),
                      kinds=args.regularizers or ("quadratic",), **common)
        rows = experiments.run_timing(**params)
    out = Path(args.out or f"{kind}.csv")
    _write_csv(rows, out)
    meta = experiments.metadata(kind, args.seed, params)
    meta["rows"] = len(rows)
    meta["entropy_cost_shift"] = experiments.ENTROPY_COST_SHIFT
    io.save_json(meta, _sidecar(out, ".meta.json"))
    statuses = {r["status"] for r in rows}
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK if statuses <= {"ok"} else EXIT_SOLVER


def cmd_color_transfer(args) -> int:
    from .transfer import color_transfer

    try:
        src = io.read_image(args.source)
        tgt = io.read_image(args.target)
        uses_entropy = "entropy" in (args.phi, args.varphi)
        shift = args.cost_shift
        if shift is None:
            shift = experiments.ENTROPY_COST_SHIFT if uses_entropy else 0.0
        config = _config(args, cost_shift=shift)
    except (io.InputError, ProblemError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    try:
        res = color_transfer(src, tgt, args.k, config, seed=args.seed)
    except ProblemError as exc:
        _err(str(exc))
        return EXIT_INPUT
    except RuntimeError as exc:
        _err(str(exc))
        return EXIT_SOLVER
    out = Path(args.out)
    io.write_image(res.image, out)
    meta = {
        "source": str(args.source), "target": str(args.target), "k": args.k, "seed": args.seed,
        "clusters_source": int(res.source.centers.shape[0]),
        "clusters_target": int(res.target.centers.shape[0]),
        "config": io.config_to_dict(config), "sweeps": res.sweeps, "converged": res.converged,
        "zero_mass_clusters": int(np.count_nonzero(res.zero_rows)),
        "diagnostics": res.report.to_dict(),
    }
    io.save_json(meta, _sidecar(out, ".json"))
    if not res.converged:
        _err("solver did not converge; image written anyway")
        return EXIT_SOLVER
    print(f"wrote {out} (mass destroyed {res.report.mass_destroyed:.4g}, "
          f"created {res.report.mass_created:.4g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drot", description="Dual regularized optimal transport.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a problem file with Project and Forget")
    p.add_argument("--problem", required=True)
    _add_solver_flags(p)
    p.add_argument("--out", default="plan.csv", help="plan CSV; summary and potentials go alongside")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="check a stored solution")
    p.add_argument("--problem", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--potentials", required=True)
    _add_solver_flags(p, gamma_required=False)
    p.add_argument("--kkt-tol", type=float, default=1e-6)
    p.add_argument("--exact", action="store_true", help="also solve exact OT and check the bounds")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("experiment", help="regenerate sweep data as CSV")
    p.add_argument("experiment", choices=("sparsity", "rate", "mass", "timing"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=None, help="instance size")
    p.add_argument("--sizes", type=_ints, default=None, help="timing sizes, e.g. 101,501")
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--gammas", type=_floats, default=None)
    p.add_argument("--regularizers", type=_kinds, default=None)
    p.add_argument("--cost", choices=("ones", "sqeuclidean"), default="ones", help="rate cost")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-sweeps", type=int, default=1_000_000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("color-transfer", help="recolour an image with another's palette")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    _add_solver_flags(p, default_shift=None)
    p.add_argument("--out", default="transfer.png")
    p.set_defaults(func=cmd_color_transfer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ProblemError as exc:
        _err(str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
