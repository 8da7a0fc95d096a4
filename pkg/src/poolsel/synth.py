"""Seeded synthetic feature pools: Gaussian blobs and long-tail class sizes.

These generators stand in for real backbone features so selection and
evaluation behavior can be verified at desk scale with known ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .rand import rng_from_seed, sample_without_replacement
from .store import EmbeddingMatrix, LabelVector


@dataclass(frozen=True)
class BlobSpec:
    """Isotropic Gaussian blobs, one per class.

    per_class_counts fixes the pool size of each class; centers are drawn
    uniformly in [-center_scale, center_scale]^dim and points get N(0, sigma^2)
    noise per coordinate. Rows are grouped by class and then shuffled.
    """

    per_class_counts: tuple[int, ...]
    dim: int
    center_scale: float
    sigma: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "per_class_counts", tuple(int(c) for c in self.per_class_counts))
        if len(self.per_class_counts) < 1 or any(c < 1 for c in self.per_class_counts):
            raise ArgumentError("per_class_counts must be >= 1 for every class")
        if self.dim < 1:
            raise ArgumentError("dim must be >= 1")
        if self.sigma <= 0 or self.center_scale <= 0:
            raise ArgumentError("sigma and center_scale must be > 0")

    @property
    def num_classes(self) -> int:
        return len(self.per_class_counts)

    @property
    def n(self) -> int:
        return sum(self.per_class_counts)


def _blob_points(centers: np.ndarray, spec: BlobSpec, counts, rng) -> tuple[np.ndarray, np.ndarray]:
    parts = []
    labels = []
    for c, count in enumerate(counts):
        pts = centers[c] + spec.sigma * rng.standard_normal((count, spec.dim))
        parts.append(pts)
        labels.append(np.full(count, c, dtype=np.int32))
    x = np.concatenate(parts, axis=0)
    y = np.concatenate(labels)
    perm = sample_without_replacement(len(y), len(y), rng)
    return x[perm], y[perm]


def make_blobs(spec: BlobSpec) -> tuple[EmbeddingMatrix, LabelVector]:
    """Deterministic blob pool; same BlobSpec, same bytes."""
    rng = rng_from_seed(spec.seed)
    centers = rng.uniform(-spec.center_scale, spec.center_scale, (spec.num_classes, spec.dim))
    x, y = _blob_points(centers, spec, spec.per_class_counts, rng)
    return (
        EmbeddingMatrix(x.astype(np.float32)),
        LabelVector(y, num_classes=spec.num_classes),
    )


def make_blob_split(
    spec: BlobSpec, test_per_class: int
) -> tuple[EmbeddingMatrix, LabelVector, EmbeddingMatrix, LabelVector]:
    """Train and test pools drawn around the same class centers.

    The train half consumes the generator stream exactly as make_blobs does,
    so it is identical to make_blobs(spec); the test half continues the
    stream with test_per_class points per class.
    """
    if test_per_class < 1:
        raise ArgumentError("test_per_class must be >= 1")
    rng = rng_from_seed(spec.seed)
    centers = rng.uniform(-spec.center_scale, spec.center_scale, (spec.num_classes, spec.dim))
    xtr, ytr = _blob_points(centers, spec, spec.per_class_counts, rng)
    xte, yte = _blob_points(centers, spec, [test_per_class] * spec.num_classes, rng)
    return (
        EmbeddingMatrix(xtr.astype(np.float32)),
        LabelVector(ytr, num_classes=spec.num_classes),
        EmbeddingMatrix(xte.astype(np.float32)),
        LabelVector(yte, num_classes=spec.num_classes),
    )


def make_longtail(
    num_classes: int, max_count: int, min_count: int, exponent: float = 1.0
) -> list[int]:
    """Monotone nonincreasing class sizes interpolated geometrically.

    Class c receives round(max * (min/max)^(c/(C-1))); exponent reshapes the
    interpolation fraction (1.0 keeps it purely geometric). Endpoints are
    exactly max_count and min_count.
    """
    if num_classes < 1:
        raise ArgumentError("num_classes must be >= 1")
    if not max_count >= min_count >= 1:
        raise ArgumentError("need max_count >= min_count >= 1")
    if exponent <= 0:
        raise ArgumentError("exponent must be > 0")
    if num_classes == 1:
        return [max_count]
    ratio = min_count / max_count
    counts = []
    for c in range(num_classes):
        frac = (c / (num_classes - 1)) ** exponent
        counts.append(int(round(max_count * ratio**frac)))
    return counts
