"""Deterministic seeded K-means: D^2-weighted init, Lloyd iterations, and
nearest-to-center point extraction.

All distance work runs in double precision over fixed-size point chunks, so
results do not depend on how callers parallelize around this module. Ties
everywhere break toward the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .rand import rng_from_seed, sample_without_replacement, weighted_index
from .store import EmbeddingMatrix

DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-4

_CHUNK = 4096  # rows per distance block; fixed so summation order is fixed


@dataclass
class Centroids:
    """Fitted cluster centers with per-point assignment and objective trace."""

    centers: np.ndarray  # (k, d) float64
    assignment: np.ndarray  # (n,) int64, values in [0, k)
    objective: float  # sum of squared distances to assigned centers
    iterations_run: int
    objective_trace: list[float] = field(default_factory=list)
    repair_iterations: list[int] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centers.shape[0]


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, (n, k) float64, chunked."""
    c_sq = np.einsum("kd,kd->k", centers, centers)
    out = np.empty((points.shape[0], centers.shape[0]), dtype=np.float64)
    for start in range(0, points.shape[0], _CHUNK):
        block = points[start : start + _CHUNK]
        b_sq = np.einsum("nd,nd->n", block, block)
        d2 = b_sq[:, None] + c_sq[None, :] - 2.0 * (block @ centers.T)
        np.maximum(d2, 0.0, out=d2)
        out[start : start + _CHUNK] = d2
    return out


def kmeanspp_init(m: EmbeddingMatrix, k: int, seed: int) -> np.ndarray:
    """k distinct data points chosen by D^2 weighting (k-means++).

    The first center is uniform; each later center is drawn with probability
    proportional to its squared distance to the nearest chosen center. When
    every remaining point duplicates a chosen center (total weight zero), the
    draw falls back to uniform over the unchosen indices.
    """
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if k > m.n:
        raise ArgumentError(f"k={k} exceeds pool size n={m.n}")
    x = m.data.astype(np.float64)
    rng = rng_from_seed(seed)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = int(rng.integers(m.n))
    d2 = _sq_dists(x, x[chosen[0]][None, :])[:, 0]
    for j in range(1, k):
        if d2.max() > 0.0:
            idx = weighted_index(d2, rng)
        else:
            remaining = np.setdiff1d(np.arange(m.n), chosen[:j])
            idx = int(remaining[sample_without_replacement(len(remaining), 1, rng)[0]])
        chosen[j] = idx
        if j < k - 1:
            np.minimum(d2, _sq_dists(x, x[idx][None, :])[:, 0], out=d2)
    return x[chosen].copy()


def lloyd_fit(
    m: EmbeddingMatrix,
    init: np.ndarray,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> Centroids:
    """Lloyd iterations from the given initial centers.

    Alternates nearest-center assignment and mean updates until the largest
    center movement drops to tol or max_iter is hit. An empty cluster is
    reseeded at the point currently farthest from its assigned center
    (lowest cluster index repaired first), which keeps k exact at the cost
    of a possible one-step objective bump.
    """
    init = np.asarray(init, dtype=np.float64)
    if init.ndim != 2 or init.shape[1] != m.d:
        raise ArgumentError(f"init must be (k, {m.d}), got {init.shape}")
    k = init.shape[0]
    if k < 1 or k > m.n:
        raise ArgumentError(f"k={k} must be in [1, {m.n}]")
    if max_iter < 1:
        raise ArgumentError(f"max_iter must be >= 1, got {max_iter}")
    if tol < 0:
        raise ArgumentError(f"tol must be >= 0, got {tol}")

    x = m.data.astype(np.float64)
    centers = init.copy()
    trace: list[float] = []
    repairs: list[int] = []
    iterations = 0

    for it in range(1, max_iter + 1):
        iterations = it
        d2 = _sq_dists(x, centers)
        assignment = np.argmin(d2, axis=1)  # first min -> lowest center index
        dmin = d2[np.arange(m.n), assignment]
        trace.append(float(dmin.sum()))

        sums = np.zeros_like(centers)
        np.add.at(sums, assignment, x)  # applied in point-index order
        counts = np.bincount(assignment, minlength=k).astype(np.float64)
        new_centers = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], centers)

        empty = np.flatnonzero(counts == 0)
        if empty.size:
            repairs.append(it)
            dmin = dmin.copy()
            for j in empty:
                p = int(np.argmax(dmin))  # first max -> lowest point index
                new_centers[j] = x[p]
                assignment[p] = j
                dmin[p] = 0.0

        movement = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if movement <= tol:
            break

    # Sync assignment with the final centers and record the final objective.
    d2 = _sq_dists(x, centers)
    assignment = np.argmin(d2, axis=1)
    objective = float(d2[np.arange(m.n), assignment].sum())
    trace.append(objective)
    return Centroids(
        centers=centers,
        assignment=assignment.astype(np.int64),
        objective=objective,
        iterations_run=iterations,
        objective_trace=trace,
        repair_iterations=repairs,
    )


def nearest_to_centroids(
    m: EmbeddingMatrix, c: Centroids, exclude=()
) -> list[int]:
    """Per center (in center order), the nearest point not excluded and not
    already claimed by an earlier center. Distance ties break toward the
    lowest point index.
    """
    excluded = np.zeros(m.n, dtype=bool)
    for i in exclude:
        if not 0 <= i < m.n:
            raise ArgumentError(f"exclude index {i} out of range for n={m.n}")
        excluded[i] = True
    if m.n - int(excluded.sum()) < c.k:
        raise ArgumentError(
            f"need {c.k} non-excluded points, have {m.n - int(excluded.sum())}"
        )
    x = m.data.astype(np.float64)
    picked: list[int] = []
    for j in range(c.k):
        d2 = _sq_dists(x, c.centers[j][None, :])[:, 0]
        d2[excluded] = np.inf
        p = int(np.argmin(d2))
        picked.append(p)
        excluded[p] = True
    return picked
