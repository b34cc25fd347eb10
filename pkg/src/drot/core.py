"""Problem and solution data model shared by the solvers and diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .regularizers import RegularizerSpec, as_spec, from_internal

__all__ = [
    "ProblemError",
    "ProblemInstance",
    "DualPotentials",
    "TransportPlan",
    "SolverConfig",
    "SweepStats",
    "SolveResult",
    "make_problem",
    "sqeuclidean_cost",
    "gaussian_instance",
    "random_simplex_instance",
    "RNG_ALGORITHM",
]

RNG_ALGORITHM = "numpy.random.Generator(PCG64)"


class ProblemError(ValueError):
    """Invalid measures, costs or solver settings."""


def _frozen(x, dtype=np.float64):
    x = np.array(x, dtype=dtype)
    x.setflags(write=False)
    return x


def _check_measure(w, name):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ProblemError(f"{name} must be a nonempty vector")
    if not np.all(np.isfinite(w)):
        raise ProblemError(f"{name} has non-finite weights")
    if np.any(w < 0):
        raise ProblemError(f"{name} has a negative weight")
    if np.any(w == 0):
        idx = int(np.flatnonzero(w == 0)[0])
        raise ProblemError(f"{name} has a zero-weight atom at index {idx}")
    return w


@dataclass(frozen=True)
class ProblemInstance:
    """Validated ``(a, b, C)`` triple. Arrays are read-only."""

    a: np.ndarray
    b: np.ndarray
    C: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.C.shape

    def __eq__(self, other):
        if not isinstance(other, ProblemInstance):
            return NotImplemented
        return (
            np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.C, other.C)
        )

    __hash__ = None


def make_problem(a, b, C) -> ProblemInstance:
    """Validate and bundle two measures with a dense cost matrix.

    Measures are kept as given (no renormalisation); atoms of zero weight are
    rejected because the exponential and entropy initialisations need
    strictly positive weights.
    """
    a = _check_measure(a, "a")
    b = _check_measure(b, "b")
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise ProblemError(
            f"dimension mismatch: cost is {C.shape}, measures are ({a.size}, {b.size})"
        )
    if not np.all(np.isfinite(C)):
        raise ProblemError("cost matrix has non-finite entries")
    if np.any(C < 0):
        raise ProblemError("cost matrix has negative entries")
    return ProblemInstance(_frozen(a), _frozen(b), _frozen(C))


def sqeuclidean_cost(x, y) -> np.ndarray:
    """Pairwise squared Euclidean distances ``C_ij = ||x_i - y_j||^2``."""
    try:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
    except ValueError as exc:
        raise ProblemError(f"points have mixed dimensions: {exc}") from None
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ProblemError("points have mixed dimensions")
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _gaussian_weights(grid, mean, variance):
    w = np.exp(-((grid - mean) ** 2) / (2.0 * variance))
    return w / w.sum()


def gaussian_instance(n, mean1=-15.0, mean2=15.0, variance=10.0, lo=-20.0, hi=20.0,
                      cost="sqeuclidean") -> ProblemInstance:
    """Two sampled Gaussians on an equidistant grid of ``n`` points in ``[lo, hi]``.

    Each measure is the Gaussian density evaluated at the grid points and
    normalised to total mass one. ``cost="sqeuclidean"`` uses squared grid
    distances, ``cost="ones"`` the constant matrix ``C_ij = 1``.
    """
    if n < 2 or not lo < hi or not variance > 0:
        raise ProblemError("invalid grid: need n >= 2, lo < hi and variance > 0")
    grid = np.linspace(lo, hi, n)
    a = _gaussian_weights(grid, mean1, variance)
    b = _gaussian_weights(grid, mean2, variance)
    if cost == "sqeuclidean":
        C = sqeuclidean_cost(grid, grid)
    elif cost == "ones":
        C = np.ones((n, n))
    else:
        raise ProblemError(f"unknown cost {cost!r}")
    # far tails underflow to exactly zero for large n; keep atoms strictly positive
    tiny = np.finfo(np.float64).tiny
    return make_problem(np.maximum(a, tiny), np.maximum(b, tiny), C)


def random_simplex_instance(n, m=None, seed=0) -> ProblemInstance:
    """Uniform samples ``a, b`` from the simplex and costs ``C_ij ~ U[0, 1]``."""
    m = n if m is None else m
    rng = np.random.default_rng(seed)
    a = rng.dirichlet(np.ones(n))
    b = rng.dirichlet(np.ones(m))
    C = rng.uniform(0.0, 1.0, size=(n, m))
    return make_problem(a, b, C)


@dataclass(frozen=True)
class TransportPlan:
    """Sparse nonnegative ``m x n`` matrix stored as coordinate triplets.

    Only strictly positive values are stored; the order of the triplets is
    kept as given (the solver uses it to record its active-set order).
    """

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = _frozen(self.rows, np.int64)
        cols = _frozen(self.cols, np.int64)
        vals = _frozen(self.values)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ProblemError("plan triplets must be three vectors of equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.m or cols.min() < 0 or cols.max() >= self.n:
                raise ProblemError("plan index out of range")
            if np.any(~(vals > 0)):
                raise ProblemError("plan values must be strictly positive")
            if np.unique(rows * self.n + cols).size != rows.size:
                raise ProblemError("duplicate plan entry")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", vals)

    @classmethod
    def empty(cls, m, n):
        return cls(m, n, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    @classmethod
    def from_dense(cls, P, threshold=0.0):
        P = np.asarray(P, dtype=np.float64)
        rows, cols = np.nonzero(P > threshold)
        return cls(P.shape[0], P.shape[1], rows, cols, P[rows, cols])

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def to_dense(self) -> np.ndarray:
        P = np.zeros((self.m, self.n))
        P[self.rows, self.cols] = self.values
        return P

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.values, minlength=self.m).astype(np.float64)

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.values, minlength=self.n).astype(np.float64)

    def support(self, tol=0.0) -> set:
        keep = self.values > tol
        return set(zip(self.rows[keep].tolist(), self.cols[keep].tolist()))

    def sorted(self) -> "TransportPlan":
        """Same plan with triplets in row-major order."""
        order = np.lexsort((self.cols, self.rows))
        return TransportPlan(self.m, self.n, self.rows[order], self.cols[order], self.values[order])

    def __eq__(self, other):
        if not isinstance(other, TransportPlan):
            return NotImplemented
        a, b = self.sorted(), other.sorted()
        return (
            a.shape == b.shape
            and np.array_equal(a.rows, b.rows)
            and np.array_equal(a.cols, b.cols)
            and np.array_equal(a.values, b.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class DualPotentials:
    """Potentials ``f`` (rows) and ``g`` (columns).

    For entropy-regularized sides the solver keeps ``log f`` (``log_f``) to
    avoid overflow; ``f`` is then its exponential and may be ``inf`` before
    convergence. ``c1``/``c2`` are the multipliers of the nonnegativity
    constraints and are present exactly for entropy sides.
    """

    f: np.ndarray
    g: np.ndarray
    c1: Optional[np.ndarray] = None
    c2: Optional[np.ndarray] = None
    log_f: Optional[np.ndarray] = None
    log_g: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("f", "g", "c1", "c2", "log_f", "log_g"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _frozen(v))

    @classmethod
    def from_internal(cls, phi, varphi, rf, rg, c1=None, c2=None):
        phi, varphi = as_spec(phi), as_spec(varphi)
        f = from_internal(phi, rf)
        g = from_internal(varphi, rg)
        ent_f = phi.kind == "entropy"
        ent_g = varphi.kind == "entropy"
        return cls(
            f,
            g,
            c1=(np.zeros_like(f) if c1 is None else c1) if ent_f else None,
            c2=(np.zeros_like(g) if c2 is None else c2) if ent_g else None,
            log_f=np.array(rf, dtype=np.float64) if ent_f else None,
            log_g=np.array(rg, dtype=np.float64) if ent_g else None,
        )

    def internal(self, phi, varphi):
        """Solver representation ``(r_f, r_g)``."""
        phi, varphi = as_spec(phi), as_spec(varphi)
        if phi.kind == "entropy":
            rf = self.log_f if self.log_f is not None else np.log(self.f)
        else:
            rf = self.f
        if varphi.kind == "entropy":
            rg = self.log_g if self.log_g is not None else np.log(self.g)
        else:
            rg = self.g
        return np.array(rf, dtype=np.float64), np.array(rg, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, DualPotentials):
            return NotImplemented

        def same(x, y):
            return (x is None and y is None) or (
                x is not None and y is not None and np.array_equal(x, y)
            )

        return all(
            same(getattr(self, k), getattr(other, k))
            for k in ("f", "g", "c1", "c2", "log_f", "log_g")
        )

    __hash__ = None


@dataclass(frozen=True)
class SolverConfig:
    """Settings shared by the Project-and-Forget solver and the dense oracle.

    ``cost_shift`` is added to every cost entry when either regularizer is
    entropy (ignored otherwise); entropy needs strictly positive costs.
    """

    gamma: float
    phi: RegularizerSpec = RegularizerSpec("quadratic")
    varphi: RegularizerSpec = RegularizerSpec("quadratic")
    feasibility_tol: float = 1e-8
    max_sweeps: int = 100_000
    cost_shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "phi", as_spec(self.phi))
        object.__setattr__(self, "varphi", as_spec(self.varphi))
        object.__setattr__(self, "gamma", float(self.gamma))
        if not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ProblemError("gamma must be a positive finite number")
        if not self.feasibility_tol > 0:
            raise ProblemError("feasibility_tol must be positive")
        if int(self.max_sweeps) < 1:
            raise ProblemError("max_sweeps must be a positive integer")
        if not self.cost_shift >= 0:
            raise ProblemError("cost_shift must be nonnegative")

    @property
    def uses_entropy(self) -> bool:
        return "entropy" in (self.phi.kind, self.varphi.kind)

    def effective_cost(self, C) -> np.ndarray:
        C = np.asarray(C, dtype=np.float64)
        if self.uses_entropy:
            C = C + self.cost_shift
            if C.min() <= 0:
                raise ProblemError(
                    "entropy regularizer needs strictly positive costs; set cost_shift > 0"
                )
        return C


@dataclass(frozen=True)
class SweepStats:
    sweep: int
    violations_found: int
    max_violation: float
    feasibility_error: float
    active_count: int
    primal_objective: float


@dataclass(frozen=True)
class SolveResult:
    potentials: DualPotentials
    plan: TransportPlan
    primal_objective: float
    dual_objective: float
    feasibility_error: float
    sweeps: int
    converged: bool
    history: Tuple[SweepStats, ...] = field(default=(), compare=False, repr=False)

    @property
    def duality_gap(self) -> float:
        return abs(self.dual_objective - self.primal_objective)
