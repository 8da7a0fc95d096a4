"""Embedding, label, and selection file I/O plus feature normalization.

Binary layouts (little-endian throughout):

  EMB1: magic b"EMB1" | u32 version=1 | u64 n | u32 d | u8 dtype (1 = f32)
        | 3 zero pad bytes | n*d float32, row-major
  LBL1: magic b"LBL1" | u32 version=1 | u64 n | u32 C (0 = infer from max+1)
        | n int32 labels

Selections are JSON documents (SEL1) with keys strategy, seed,
budget_schedule, round_boundaries, indices.

Matrices are single-precision in memory and on disk; statistics are
accumulated in double precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, IoError, TruncationError

EMB1_MAGIC = b"EMB1"
LBL1_MAGIC = b"LBL1"
_EMB1_HEADER = struct.Struct("<4sIQIB3x")
_LBL1_HEADER = struct.Struct("<4sIQI")
_DTYPE_F32 = 1

STANDARDIZE_EPS = 1e-8


class EmbeddingMatrix:
    """Immutable n x d float32 feature matrix with all values finite."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        # Own copy, so freezing it never makes a caller's array read-only.
        arr = np.array(data, dtype=np.float32, order="C")
        if arr.ndim != 2:
            raise DataError(f"expected a 2-D array, got {arr.ndim}-D")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"matrix must be at least 1x1, got {arr.shape}")
        bad = ~np.isfinite(arr)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(
                f"non-finite value at row {r}, col {c}", row=int(r), col=int(c)
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("EmbeddingMatrix is immutable")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def rows(self, indices) -> "EmbeddingMatrix":
        """Sub-matrix of the given rows, in the given order."""
        return EmbeddingMatrix(self.data[np.asarray(indices, dtype=np.int64)])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EmbeddingMatrix)
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __repr__(self) -> str:
        return f"EmbeddingMatrix(n={self.n}, d={self.d})"


class LabelVector:
    """Immutable per-row class indices in [0, C)."""

    __slots__ = ("labels", "num_classes")

    def __init__(self, labels: np.ndarray, num_classes: int | None = None):
        arr = np.array(labels, dtype=np.int32, order="C")
        if arr.ndim != 1:
            raise DataError(f"expected a 1-D label array, got {arr.ndim}-D")
        if arr.shape[0] < 1:
            raise DataError("label vector must be non-empty")
        if (arr < 0).any():
            row = int(np.argmax(arr < 0))
            raise DataError(f"negative label at row {row}", row=row)
        top = int(arr.max())
        if num_classes is None:
            num_classes = top + 1
        elif num_classes <= top:
            raise DataError(
                f"declared class count {num_classes} <= max label {top}"
            )
        if num_classes < 1:
            raise DataError("class count must be >= 1")
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "num_classes", int(num_classes))

    def __setattr__(self, name, value):
        raise AttributeError("LabelVector is immutable")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def __repr__(self) -> str:
        return f"LabelVector(n={self.n}, C={self.num_classes})"


@dataclass(frozen=True)
class NormStats:
    """Per-dimension mean and population std captured from a training matrix."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def d(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class SelectionResult:
    """Ordered distinct pool indices chosen for annotation, with provenance.

    round_boundaries holds the cumulative index count after each round and
    must replicate the deltas of budget_schedule.
    """

    indices: tuple[int, ...]
    strategy: str
    seed: int
    budget_schedule: tuple[int, ...] = field(default=())
    round_boundaries: tuple[int, ...] = field(default=())

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        sched = tuple(int(b) for b in self.budget_schedule) or (len(idx),)
        bounds = tuple(int(b) for b in self.round_boundaries) or sched
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "budget_schedule", sched)
        object.__setattr__(self, "round_boundaries", bounds)
        if len(set(idx)) != len(idx):
            raise DataError("selection indices are not distinct")
        if any(i < 0 for i in idx):
            raise DataError("selection indices must be nonnegative")
        if len(idx) != sched[-1]:
            raise DataError(
                f"{len(idx)} indices but final cumulative budget is {sched[-1]}"
            )
        if len(bounds) != len(sched):
            raise DataError("round_boundaries and budget_schedule length mismatch")
        deltas_b = np.diff(np.concatenate(([0], bounds)))
        deltas_s = np.diff(np.concatenate(([0], sched)))
        if (deltas_b < 0).any():
            raise DataError("round_boundaries must be nondecreasing")
        if not np.array_equal(deltas_b, deltas_s):
            raise DataError("round_boundaries do not match budget_schedule deltas")

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def rounds(self) -> int:
        return len(self.round_boundaries)

    def round_indices(self, t: int) -> tuple[int, ...]:
        """Indices contributed by round t."""
        start = self.round_boundaries[t - 1] if t > 0 else 0
        return self.indices[start : self.round_boundaries[t]]

    def validate_for_pool(self, n: int) -> None:
        """Check every index addresses a row of an n-row pool."""
        if any(i >= n for i in self.indices):
            raise DataError(f"selection index out of range for pool of {n}")


def load_embeddings(path) -> EmbeddingMatrix:
    """Read an EMB1 file, validating the header and value finiteness."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(raw) < _EMB1_HEADER.size:
        raise TruncationError(f"{path}: file shorter than EMB1 header")
    magic, version, n, d, dtype = _EMB1_HEADER.unpack_from(raw)
    if magic != EMB1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {EMB1_MAGIC!r}")
    if version != 1:
        raise FormatError(f"{path}: unsupported EMB1 version {version}")
    if dtype != _DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: header declares empty matrix {n}x{d}")
    expected = _EMB1_HEADER.size + 4 * n * d
    if len(raw) < expected:
        raise TruncationError(
            f"{path}: payload truncated, have {len(raw)} bytes, need {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_EMB1_HEADER.size)
    return EmbeddingMatrix(values.reshape(n, d))


def save_embeddings(m: EmbeddingMatrix, path) -> None:
    """Write an EMB1 file; load(save(m)) is bit-identical to m."""
    header = _EMB1_HEADER.pack(EMB1_MAGIC, 1, m.n, m.d, _DTYPE_F32)
    payload = np.ascontiguousarray(m.data, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_labels(path) -> LabelVector:
    """Read an LBL1 file; header C of 0 means infer C as max label + 1."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(raw) < _LBL1_HEADER.size:
        raise TruncationError(f"{path}: file shorter than LBL1 header")
    magic, version, n, c = _LBL1_HEADER.unpack_from(raw)
    if magic != LBL1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {LBL1_MAGIC!r}")
    if version != 1:
        raise FormatError(f"{path}: unsupported LBL1 version {version}")
    if n < 1:
        raise FormatError(f"{path}: header declares empty label vector")
    expected = _LBL1_HEADER.size + 4 * n
    if len(raw) < expected:
        raise TruncationError(
            f"{path}: payload truncated, have {len(raw)} bytes, need {expected}"
        )
    labels = np.frombuffer(raw, dtype="<i4", count=n, offset=_LBL1_HEADER.size)
    return LabelVector(labels, num_classes=None if c == 0 else int(c))


def save_labels(v: LabelVector, path, *, declare_classes: bool = True) -> None:
    """Write an LBL1 file; C is recorded in the header unless disabled."""
    c = v.num_classes if declare_classes else 0
    header = _LBL1_HEADER.pack(LBL1_MAGIC, 1, v.n, c)
    payload = np.ascontiguousarray(v.labels, dtype="<i4").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def selection_to_json(sel: SelectionResult) -> str:
    """Canonical SEL1 JSON text: fixed key order, newline-terminated."""
    doc = {
        "strategy": sel.strategy,
        "seed": sel.seed,
        "budget_schedule": list(sel.budget_schedule),
        "round_boundaries": list(sel.round_boundaries),
        "indices": list(sel.indices),
    }
    return json.dumps(doc, indent=2) + "\n"


def save_selection(sel: SelectionResult, path) -> None:
    try:
        Path(path).write_text(selection_to_json(sel))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_selection(path) -> SelectionResult:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid selection JSON: {e}") from e
    missing = {"strategy", "seed", "budget_schedule", "round_boundaries", "indices"} - doc.keys()
    if missing:
        raise FormatError(f"{path}: selection JSON missing keys {sorted(missing)}")
    return SelectionResult(
        indices=tuple(doc["indices"]),
        strategy=str(doc["strategy"]),
        seed=int(doc["seed"]),
        budget_schedule=tuple(doc["budget_schedule"]),
        round_boundaries=tuple(doc["round_boundaries"]),
    )


def standardize(
    m: EmbeddingMatrix, stats: NormStats | None = None
) -> tuple[EmbeddingMatrix, NormStats]:
    """Shift/scale each dimension to zero mean, unit population std.

    With stats given (e.g. train-set statistics applied to a test set) the
    stored values are used instead of recomputing. A small epsilon keeps
    zero-variance dimensions at exactly zero.
    """
    x = m.data.astype(np.float64)
    if stats is None:
        mean = x.mean(axis=0)
        std = x.std(axis=0)  # population: divide by n
        stats = NormStats(mean=mean, std=std)
    elif stats.d != m.d:
        raise DataError(f"stats have {stats.d} dims, matrix has {m.d}")
    z = (x - stats.mean) / (stats.std + STANDARDIZE_EPS)
    return EmbeddingMatrix(z.astype(np.float32)), stats


def l2_normalize(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale each row to unit Euclidean norm; all-zero rows stay zero."""
    x = m.data.astype(np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    out = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    return EmbeddingMatrix(out.astype(np.float32))
