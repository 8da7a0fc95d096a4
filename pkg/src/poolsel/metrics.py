"""Coverage, occurrence-distribution, and accuracy metrics.

Coverage always uses the declared class count as its denominator, so classes
with zero pool presence (long-tail datasets) count against coverage rather
than silently vanishing. Percentages are formatted to one decimal in tables;
JSON keeps full precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .store import LabelVector, SelectionResult


def selection_class_counts(selection: SelectionResult, labels: LabelVector) -> np.ndarray:
    """Occurrences of each class among the selected indices, length C."""
    selection.validate_for_pool(labels.n)
    idx = np.asarray(selection.indices, dtype=np.int64)
    return np.bincount(labels.labels[idx], minlength=labels.num_classes)


def category_coverage(selection: SelectionResult, labels: LabelVector) -> float:
    """Percentage of declared classes with at least one selected example."""
    counts = selection_class_counts(selection, labels)
    return 100.0 * float((counts > 0).sum()) / labels.num_classes


def occurrence_histogram(selection: SelectionResult, labels: LabelVector) -> dict[int, int]:
    """Map occurrence count -> number of classes selected exactly that often.

    Classes with zero occurrences land in the 0 bucket, so values sum to C.
    """
    counts = selection_class_counts(selection, labels)
    values, freq = np.unique(counts, return_counts=True)
    return {int(v): int(f) for v, f in zip(values, freq)}


def top1_accuracy(predicted, truth) -> float:
    """Percentage of positions where predicted equals truth."""
    p = np.asarray(predicted)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise DataError(f"prediction/truth shape mismatch: {p.shape} vs {t.shape}")
    return 100.0 * float((p == t).mean())


def mean_per_class_accuracy(predicted, truth, num_classes: int) -> float:
    """Unweighted mean of per-class accuracies over classes present in truth."""
    p = np.asarray(predicted)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise DataError(f"prediction/truth shape mismatch: {p.shape} vs {t.shape}")
    accs = []
    for c in range(num_classes):
        mask = t == c
        if mask.any():
            accs.append(float((p[mask] == c).mean()))
    return 100.0 * float(np.mean(accs))


@dataclass
class MetricsReport:
    """Bundle of the evaluation outputs for one (strategy, budget, seed) run."""

    coverage_percent: float
    per_class_counts: list[int]
    occurrence_histogram: dict[int, int]
    top1_accuracy: float | None = None
    mean_per_class_accuracy: float | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "coverage_percent": self.coverage_percent,
            "per_class_counts": self.per_class_counts,
            "occurrence_histogram": {str(k): v for k, v in self.occurrence_histogram.items()},
            "top1_accuracy": self.top1_accuracy,
            "mean_per_class_accuracy": self.mean_per_class_accuracy,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def build_report(
    selection: SelectionResult,
    labels: LabelVector,
    predicted=None,
    truth=None,
    truth_num_classes: int | None = None,
    metadata: dict | None = None,
) -> MetricsReport:
    """Assemble coverage/histogram metrics, plus accuracies when predictions
    are supplied."""
    counts = selection_class_counts(selection, labels)
    top1 = mpc = None
    if predicted is not None:
        top1 = top1_accuracy(predicted, truth)
        mpc = mean_per_class_accuracy(
            predicted, truth, truth_num_classes or labels.num_classes
        )
    return MetricsReport(
        coverage_percent=category_coverage(selection, labels),
        per_class_counts=[int(c) for c in counts],
        occurrence_histogram=occurrence_histogram(selection, labels),
        top1_accuracy=top1,
        mean_per_class_accuracy=mpc,
        metadata=metadata or {},
    )


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation of a sequence."""
    arr = np.asarray(list(values), dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def format_cell(mean: float, std: float) -> str:
    return f"{mean:.1f} ± {std:.1f}"


def format_grid(
    row_labels: list[str], col_labels: list[str], cells: dict[tuple[str, str], str], title: str = ""
) -> str:
    """Plain-text strategy x budget table with one formatted cell per pair."""
    width = max([len(s) for s in row_labels] + [8])
    col_widths = [
        max(len(c), *(len(cells.get((r, c), "-")) for r in row_labels)) for c in col_labels
    ]
    lines = []
    if title:
        lines.append(title)
    header = " " * width + "  " + "  ".join(c.rjust(w) for c, w in zip(col_labels, col_widths))
    lines.append(header)
    for r in row_labels:
        row = r.ljust(width) + "  " + "  ".join(
            cells.get((r, c), "-").rjust(w) for c, w in zip(col_labels, col_widths)
        )
        lines.append(row)
    return "\n".join(lines) + "\n"


def histogram_csv(hist: dict[int, int]) -> str:
    """CSV text: occurrence count, number of classes."""
    lines = ["occurrences,num_classes"]
    for k in sorted(hist):
        lines.append(f"{k},{hist[k]}")
    return "\n".join(lines) + "\n"
