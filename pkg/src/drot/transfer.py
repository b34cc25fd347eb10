"""Colour transfer: k-means palettes, DROT between palettes, barycentric projection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

from .core import ProblemError, SolverConfig, TransportPlan, make_problem, sqeuclidean_cost
from .diagnostics import DiagnosticsReport, kkt_report
from .solver import solve

__all__ = [
    "QuantizedImage",
    "TransferResult",
    "kmeans_quantize",
    "barycentric_project",
    "color_transfer",
    "to_float_image",
    "DEFAULT_SEED",
]

DEFAULT_SEED = 42


@dataclass(frozen=True)
class QuantizedImage:
    centers: np.ndarray  # (k, 3) in [0, 1]
    weights: np.ndarray  # (k,), sums to 1
    assignment: np.ndarray  # (height * width,) center index per pixel
    width: int
    height: int


@dataclass(frozen=True)
class TransferResult:
    image: np.ndarray  # (height, width, 3) float in [0, 1]
    report: DiagnosticsReport
    projected_centers: np.ndarray
    zero_rows: np.ndarray
    source: QuantizedImage
    target: QuantizedImage
    sweeps: int
    converged: bool


def to_float_image(img) -> np.ndarray:
    """RGB image as floats in ``[0, 1]`` with shape ``(h, w, 3)``."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] < 3:
        raise ProblemError("expected an RGB image of shape (h, w, 3)")
    img = img[..., :3]
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    img = img.astype(np.float64)
    if img.size and (img.min() < 0 or img.max() > 1):
        raise ProblemError("float images must lie in [0, 1]")
    return img


def kmeans_quantize(pixels, k, seed=DEFAULT_SEED, max_iters=300, shape=None) -> QuantizedImage:
    """Lloyd's k-means with seeded k-means++ initialisation.

    ``pixels`` is an ``(N, 3)`` array or an ``(h, w, 3)`` image. Iterates
    until assignments stop changing or ``max_iters`` is reached. Clusters
    left empty at the end are dropped, so ``len(centers)`` may be below ``k``
    and every weight is positive.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 3:
        shape = pixels.shape[:2]
        pixels = pixels.reshape(-1, pixels.shape[2])
    if pixels.ndim != 2 or pixels.shape[0] == 0:
        raise ProblemError("empty image")
    if shape is None:
        shape = (1, pixels.shape[0])
    k = int(k)
    if k < 1:
        raise ProblemError("k must be at least 1")
    distinct = np.unique(pixels, axis=0).shape[0]
    if k > distinct:
        raise ProblemError(f"k={k} exceeds the {distinct} distinct pixel values")
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=int(max_iters), tol=0.0,
                random_state=int(seed), algorithm="lloyd")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        labels = km.fit_predict(pixels)
    counts = np.bincount(labels, minlength=k)
    keep = np.flatnonzero(counts > 0)
    remap = np.full(k, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    centers = np.clip(km.cluster_centers_[keep], 0.0, 1.0)
    weights = counts[keep] / labels.size
    return QuantizedImage(centers, weights, remap[labels], width=int(shape[1]), height=int(shape[0]))


def barycentric_project(plan: TransportPlan, targets, sources=None):
    """Map each row to the plan-weighted average of the target points.

    Returns ``(points, zero_rows)``. Rows carrying no mass keep their source
    point (zeros when ``sources`` is not given) and are flagged in the boolean
    ``zero_rows`` vector.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    if plan.n != targets.shape[0]:
        raise ProblemError("plan columns do not match the number of targets")
    mass = plan.row_sums()
    acc = np.zeros((plan.m, targets.shape[1]))
    np.add.at(acc, plan.rows, plan.values[:, None] * targets[plan.cols])
    zero = mass <= 0
    out = np.zeros_like(acc) if sources is None else np.array(sources, dtype=np.float64)
    out = out.reshape(plan.m, targets.shape[1])
    out[~zero] = acc[~zero] / mass[~zero, None]
    return out, zero


def color_transfer(source_img, target_img, k, config: SolverConfig, seed=DEFAULT_SEED,
                   max_iters=300) -> TransferResult:
    """Recolour ``source_img`` with the palette of ``target_img``.

    Both images are quantised to ``k`` colours, the palettes are coupled by
    DROT with squared Euclidean costs, and every source pixel takes the
    barycentric image of its cluster centre (clamped to ``[0, 1]``).
    """
    src = to_float_image(source_img)
    tgt = to_float_image(target_img)
    qs = kmeans_quantize(src, k, seed=seed, max_iters=max_iters)
    qt = kmeans_quantize(tgt, k, seed=seed, max_iters=max_iters)
    problem = make_problem(qs.weights, qt.weights, sqeuclidean_cost(qs.centers, qt.centers))
    try:
        result = solve(problem, config)
    except Exception as exc:
        raise RuntimeError(f"colour transfer failed while solving DROT: {exc}") from exc
    projected, zero = barycentric_project(result.plan, qt.centers, sources=qs.centers)
    projected = np.clip(projected, 0.0, 1.0)
    image = projected[qs.assignment].reshape(src.shape[0], src.shape[1], 3)
    return TransferResult(
        image=image,
        report=kkt_report(problem, config, result),
        projected_centers=projected,
        zero_rows=zero,
        source=qs,
        target=qt,
        sweeps=result.sweeps,
        converged=result.converged,
    )
