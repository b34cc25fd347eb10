"""Reading and writing problems, plans, potentials and run summaries."""

from __future__ import annotations

import csv
import io as _io
import json
import os

import numpy as np

from .core import (
    DualPotentials,
    ProblemError,
    ProblemInstance,
    SolveResult,
    SolverConfig,
    TransportPlan,
    make_problem,
    sqeuclidean_cost,
)

__all__ = [
    "InputError",
    "load_problem",
    "parse_problem",
    "problem_to_json",
    "save_problem",
    "plan_to_csv",
    "parse_plan",
    "save_plan",
    "load_plan",
    "summary_dict",
    "save_json",
    "load_json",
    "potentials_to_dict",
    "potentials_from_dict",
    "config_to_dict",
    "config_from_dict",
    "save_potentials",
    "load_potentials",
    "read_image",
    "write_image",
]

PLAN_HEADER = "i,j,value"


class InputError(ValueError):
    """Malformed or unreadable input file."""


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _load_json_bytes(data: bytes, source="<input>"):
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(f"{source}: invalid UTF-8 at byte offset {exc.start}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise InputError(
            f"{source}: JSON parse error at byte offset {offset} "
            f"(line {exc.lineno}, column {exc.colno}): {exc.msg}"
        ) from exc


def _matrix(obj, name):
    try:
        arr = np.array(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name} must be numeric") from exc
    return arr


# problem files


def parse_problem(data, source="<input>") -> ProblemInstance:
    """Build a problem from JSON text or bytes.

    Layout: ``{"a": [...], "b": [...], "cost": {"dense": [[...], ...]}}`` or
    ``{"a": ..., "b": ..., "cost": {"sqeuclidean": {"x": [...], "y": [...]}}}``.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    obj = _load_json_bytes(data, source)
    if not isinstance(obj, dict):
        raise InputError(f"{source}: top level must be an object")
    missing = [k for k in ("a", "b", "cost") if k not in obj]
    if missing:
        raise InputError(f"{source}: missing field(s) {', '.join(missing)}")
    a = _matrix(obj["a"], "a")
    b = _matrix(obj["b"], "b")
    cost = obj["cost"]
    if not isinstance(cost, dict) or len(cost) != 1:
        raise InputError(f"{source}: cost must have exactly one of 'dense' or 'sqeuclidean'")
    if "dense" in cost:
        C = _matrix(cost["dense"], "cost.dense")
        if C.ndim != 2:
            if C.size == 0 and (a.size == 0 or b.size == 0):
                C = C.reshape(a.size, b.size)
            else:
                raise InputError(f"{source}: cost.dense must be a rectangular matrix")
    elif "sqeuclidean" in cost:
        pts = cost["sqeuclidean"]
        if not isinstance(pts, dict) or "x" not in pts or "y" not in pts:
            raise InputError(f"{source}: cost.sqeuclidean needs 'x' and 'y'")
        try:
            C = sqeuclidean_cost(_matrix(pts["x"], "x"), _matrix(pts["y"], "y"))
        except ValueError as exc:
            raise InputError(f"{source}: {exc}") from exc
    else:
        raise InputError(f"{source}: unknown cost kind {next(iter(cost))!r}")
    try:
        return make_problem(a, b, C)
    except ProblemError as exc:
        raise InputError(f"{source}: {exc}") from exc


def load_problem(path) -> ProblemInstance:
    return parse_problem(_read_bytes(path), source=str(path))


def problem_to_json(problem: ProblemInstance) -> str:
    obj = {
        "a": np.asarray(problem.a).tolist(),
        "b": np.asarray(problem.b).tolist(),
        "cost": {"dense": np.asarray(problem.C).tolist()},
    }
    return json.dumps(obj)


def save_problem(problem: ProblemInstance, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(problem_to_json(problem))
        fh.write("\n")


# plan files


def plan_to_csv(plan: TransportPlan) -> str:
    """CSV text with one ``i,j,value`` line per stored entry, row-major order."""
    p = plan.sorted()
    lines = [PLAN_HEADER]
    lines += [f"{i},{j},{v!r}" for i, j, v in zip(p.rows.tolist(), p.cols.tolist(), p.values.tolist())]
    return "\n".join(lines) + "\n"


def parse_plan(text, shape, source="<input>") -> TransportPlan:
    m, n = shape
    reader = csv.reader(_io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InputError(f"{source}: empty plan file") from None
    if ",".join(h.strip() for h in header) != PLAN_HEADER:
        raise InputError(f"{source}: expected header {PLAN_HEADER!r}")
    rows, cols, vals = [], [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != 3:
            raise InputError(f"{source}: line {lineno}: expected 3 fields")
        try:
            rows.append(int(rec[0]))
            cols.append(int(rec[1]))
            vals.append(float(rec[2]))
        except ValueError as exc:
            raise InputError(f"{source}: line {lineno}: {exc}") from exc
    try:
        return TransportPlan(m, n, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                             np.array(vals, dtype=np.float64))
    except (ValueError, ProblemError) as exc:
        raise InputError(f"{source}: {exc}") from exc


def save_plan(plan: TransportPlan, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(plan_to_csv(plan))


def load_plan(path, shape) -> TransportPlan:
    try:
        text = _read_bytes(path).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: invalid UTF-8 at byte offset {exc.start}") from exc
    return parse_plan(text, shape, source=str(path))


# JSON documents


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)  # "inf", "-inf", "nan": keeps the file strict JSON
    return x


def save_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    return _load_json_bytes(_read_bytes(path), source=str(path))


def config_to_dict(config: SolverConfig):
    return {
        "gamma": config.gamma,
        "phi": config.phi.kind,
        "varphi": config.varphi.kind,
        "feasibility_tol": config.feasibility_tol,
        "max_sweeps": int(config.max_sweeps),
        "cost_shift": config.cost_shift,
    }


def config_from_dict(d) -> SolverConfig:
    try:
        return SolverConfig(
            gamma=float(d["gamma"]),
            phi=d.get("phi", "quadratic"),
            varphi=d.get("varphi", "quadratic"),
            feasibility_tol=float(d.get("feasibility_tol", 1e-8)),
            max_sweeps=int(d.get("max_sweeps", 100_000)),
            cost_shift=float(d.get("cost_shift", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid solver configuration: {exc}") from exc


def summary_dict(result: SolveResult, report=None, config: SolverConfig = None):
    """Run summary; mass fields come from ``report`` (a DiagnosticsReport) when given."""
    out = {
        "primal_objective": result.primal_objective,
        "dual_objective": result.dual_objective,
        "feasibility_error": result.feasibility_error,
        "sweeps": int(result.sweeps),
        "converged": bool(result.converged),
        "nnz": int(result.plan.nnz),
    }
    if report is not None:
        out.update(
            mass_created=report.mass_created,
            mass_destroyed=report.mass_destroyed,
            mass_created_b=report.mass_created_b,
            mass_destroyed_b=report.mass_destroyed_b,
            support_size=report.support_size,
        )
    if config is not None:
        out["config"] = config_to_dict(config)
    return out


def potentials_to_dict(potentials: DualPotentials, config: SolverConfig = None):
    d = {"f": potentials.f, "g": potentials.g}
    for key in ("log_f", "log_g", "c1", "c2"):
        val = getattr(potentials, key)
        if val is not None:
            d[key] = val
    if config is not None:
        d["config"] = config_to_dict(config)
    return _plain(d)


def _vector(d, key, required=True):
    if key not in d:
        if required:
            raise InputError(f"potentials file lacks {key!r}")
        return None
    vals = d[key]
    try:
        return np.array([float(v) for v in vals], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InputError(f"potentials field {key!r} is not numeric") from exc


def potentials_from_dict(d):
    """``(DualPotentials, SolverConfig or None)`` from a parsed potentials document."""
    if not isinstance(d, dict):
        raise InputError("potentials file must hold a JSON object")
    try:
        pots = DualPotentials(
            _vector(d, "f"), _vector(d, "g"),
            c1=_vector(d, "c1", False), c2=_vector(d, "c2", False),
            log_f=_vector(d, "log_f", False), log_g=_vector(d, "log_g", False),
        )
    except ProblemError as exc:
        raise InputError(str(exc)) from exc
    config = config_from_dict(d["config"]) if "config" in d else None
    return pots, config


def save_potentials(potentials: DualPotentials, path, config: SolverConfig = None):
    save_json(potentials_to_dict(potentials, config), path)


def load_potentials(path):
    return potentials_from_dict(load_json(path))


# images


def read_image(path) -> np.ndarray:
    """8-bit RGB image as an ``(h, w, 3)`` uint8 array."""
    from PIL import Image, UnidentifiedImageError

    if not os.path.exists(path):
        raise InputError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc


def write_image(img, path):
    """Write a float ``[0, 1]`` or uint8 RGB array; format follows the extension."""
    from PIL import Image

    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
