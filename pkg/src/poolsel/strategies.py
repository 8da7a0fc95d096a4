"""Sample-selection strategies.

Each strategy maps (pool features, budget or schedule, seed) to an ordered
SelectionResult. Only the uniform samplers and the entropy strategy's probe
consume labels; clustering and core-set strategies are label-blind by
signature.

Iterative strategies (multi-batch clustering, core-set, max-entropy) follow
round schedules of cumulative budget sizes; a round's fresh randomness comes
from a seed derived as base_seed xor splitmix64(round), so earlier rounds are
stable when later ones are appended. For core-set and max-entropy the first
round is a caller-provided initial selection whose size must equal the first
cumulative budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kmeans
from .classifiers import TrainSchedule, max_entropy_schedule, probe_predict_proba, probe_train
from .errors import ArgumentError, DegenerateModelError
from .rand import rng_from_seed, round_seed, sample_without_replacement
from .store import EmbeddingMatrix, LabelVector, SelectionResult, l2_normalize


@dataclass(frozen=True)
class BudgetSchedule:
    """Strictly increasing cumulative budget sizes; the last is the total."""

    cumulative_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.cumulative_sizes)
        object.__setattr__(self, "cumulative_sizes", sizes)
        if not sizes:
            raise ArgumentError("budget schedule is empty")
        if sizes[0] < 1 or any(later <= earlier for later, earlier in zip(sizes[1:], sizes)):
            raise ArgumentError(f"budget schedule must be strictly increasing and positive, got {sizes}")

    @classmethod
    def single(cls, budget: int) -> "BudgetSchedule":
        return cls((budget,))

    @classmethod
    def parse(cls, text: str) -> "BudgetSchedule":
        try:
            sizes = tuple(int(part) for part in text.split(","))
        except ValueError as e:
            raise ArgumentError(f"cannot parse budget schedule {text!r}") from e
        return cls(sizes)

    @property
    def total(self) -> int:
        return self.cumulative_sizes[-1]

    @property
    def rounds(self) -> int:
        return len(self.cumulative_sizes)

    def delta(self, t: int) -> int:
        prev = self.cumulative_sizes[t - 1] if t > 0 else 0
        return self.cumulative_sizes[t] - prev

    def check_pool(self, n: int) -> None:
        if self.total > n:
            raise ArgumentError(f"total budget {self.total} exceeds pool size {n}")


@dataclass(frozen=True)
class StrategyConfig:
    """Shared strategy knobs.

    normalize_features applies row-wise L2 normalization to the selection
    feature space (off by default: clustering and core-set run on raw
    embeddings; only the NN evaluator is inherently cosine). probe_schedule
    overrides the entropy strategy's training recipe; None picks the default
    (Adam, lr 0.001, x0.1 at epochs 50/75, 100 epochs) with a batch size
    matched to the labeled pool.
    """

    seed: int = 0
    normalize_features: bool = False
    kmeans_max_iter: int = kmeans.DEFAULT_MAX_ITER
    kmeans_tol: float = kmeans.DEFAULT_TOL
    recluster_unlabeled_only: bool = False
    probe_schedule: TrainSchedule | None = None

    def feature_space(self, m: EmbeddingMatrix) -> EmbeddingMatrix:
        return l2_normalize(m) if self.normalize_features else m


def select_random(n: int, budget: int, seed: int) -> SelectionResult:
    """budget distinct indices, uniform without replacement."""
    if budget < 1:
        raise ArgumentError(f"budget must be >= 1, got {budget}")
    if budget > n:
        raise ArgumentError(f"budget {budget} exceeds pool size {n}")
    indices = sample_without_replacement(n, budget, rng_from_seed(seed))
    return SelectionResult(indices=tuple(indices), strategy="random", seed=seed)


def select_uniform(
    labels: LabelVector, per_class: int, seed: int, capped: bool = False
) -> SelectionResult:
    """Equal random samples per class, processed in ascending class index.

    Capped mode stops at the class size; uncapped mode requires every class
    to hold at least per_class members.
    """
    if per_class < 1:
        raise ArgumentError(f"per_class must be >= 1, got {per_class}")
    rng = rng_from_seed(seed)
    picked: list[int] = []
    for c in range(labels.num_classes):
        members = np.flatnonzero(labels.labels == c)
        if len(members) < per_class and not capped:
            raise ArgumentError(
                f"class {c} has {len(members)} members, need {per_class} (uncapped)"
            )
        take = min(per_class, len(members))
        if take:
            picked.extend(members[sample_without_replacement(len(members), take, rng)])
    return SelectionResult(
        indices=tuple(int(i) for i in picked),
        strategy="uniform_capped" if capped else "uniform",
        seed=seed,
    )


def _fit_kmeans(feats: EmbeddingMatrix, k: int, seed: int, cfg: StrategyConfig) -> kmeans.Centroids:
    init = kmeans.kmeanspp_init(feats, k, seed)
    return kmeans.lloyd_fit(feats, init, max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol)


def select_kmeans_single(m: EmbeddingMatrix, budget: int, cfg: StrategyConfig) -> SelectionResult:
    """Cluster the whole pool into budget clusters once; take the point
    nearest each center."""
    feats = cfg.feature_space(m)
    fit = _fit_kmeans(feats, budget, cfg.seed, cfg)
    picked = kmeans.nearest_to_centroids(feats, fit)
    return SelectionResult(indices=tuple(picked), strategy="kmeans_single", seed=cfg.seed)


def select_kmeans_multi(
    m: EmbeddingMatrix, schedule: BudgetSchedule, cfg: StrategyConfig
) -> SelectionResult:
    """Per round, cluster with k = budget delta and take the nearest points
    not selected in earlier rounds.

    By default every round re-clusters the full pool and skips labeled
    points only at extraction time; recluster_unlabeled_only clusters just
    the remaining pool instead.
    """
    schedule.check_pool(m.n)
    feats = cfg.feature_space(m)
    selected: list[int] = []
    for t in range(schedule.rounds):
        k = schedule.delta(t)
        seed_t = round_seed(cfg.seed, t)
        if cfg.recluster_unlabeled_only and selected:
            remaining = np.setdiff1d(np.arange(m.n), np.asarray(selected, dtype=np.int64))
            sub = feats.rows(remaining)
            fit = _fit_kmeans(sub, k, seed_t, cfg)
            picked = [int(remaining[i]) for i in kmeans.nearest_to_centroids(sub, fit)]
        else:
            fit = _fit_kmeans(feats, k, seed_t, cfg)
            picked = kmeans.nearest_to_centroids(feats, fit, exclude=selected)
        selected.extend(picked)
    return SelectionResult(
        indices=tuple(selected),
        strategy="kmeans_multi",
        seed=cfg.seed,
        budget_schedule=schedule.cumulative_sizes,
        round_boundaries=schedule.cumulative_sizes,
    )


def shannon_entropy(probs: np.ndarray) -> np.ndarray:
    """Per-row entropy -sum p ln p, with 0 ln 0 taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=1)


def rank_by_entropy(probs: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Candidates ordered by decreasing entropy; ties keep candidate order."""
    entropy = shannon_entropy(probs)
    return np.asarray(candidates)[np.argsort(-entropy, kind="stable")]


def _check_initial(initial: SelectionResult, schedule: BudgetSchedule, n: int) -> None:
    if initial.size == 0:
        raise ArgumentError("iterative strategies need a non-empty initial selection")
    if initial.size != schedule.cumulative_sizes[0]:
        raise ArgumentError(
            f"initial selection has {initial.size} indices but the first "
            f"cumulative budget is {schedule.cumulative_sizes[0]}"
        )
    initial.validate_for_pool(n)
    schedule.check_pool(n)


def select_coreset(
    m: EmbeddingMatrix,
    schedule: BudgetSchedule,
    initial: SelectionResult,
    cfg: StrategyConfig,
) -> SelectionResult:
    """Greedy k-center: repeatedly add the pool point with the largest
    minimum Euclidean distance to everything selected so far.

    Round 0 is the initial selection; the min-distance cache updates
    incrementally (one O(n) pass per pick). Ties break toward the lowest
    index. The greedy rule is deterministic, so the seed is provenance only.
    """
    _check_initial(initial, schedule, m.n)
    feats = cfg.feature_space(m)
    x = feats.data.astype(np.float64)

    selected = list(initial.indices)
    taken = np.zeros(m.n, dtype=bool)
    taken[selected] = True
    min_d2 = np.full(m.n, np.inf)
    for i in selected:
        diff = x - x[i]
        np.minimum(min_d2, np.einsum("nd,nd->n", diff, diff), out=min_d2)
    min_d2[taken] = -np.inf

    for t in range(1, schedule.rounds):
        for _ in range(schedule.delta(t)):
            p = int(np.argmax(min_d2))  # first max -> lowest index
            selected.append(p)
            taken[p] = True
            diff = x - x[p]
            np.minimum(min_d2, np.einsum("nd,nd->n", diff, diff), out=min_d2)
            min_d2[p] = -np.inf
    return SelectionResult(
        indices=tuple(selected),
        strategy="coreset",
        seed=cfg.seed,
        budget_schedule=schedule.cumulative_sizes,
        round_boundaries=schedule.cumulative_sizes,
    )


def select_max_entropy(
    m: EmbeddingMatrix,
    schedule: BudgetSchedule,
    initial: SelectionResult,
    labels_for_training: LabelVector,
    cfg: StrategyConfig,
) -> SelectionResult:
    """Per round, retrain a linear probe from scratch on the labeled-so-far
    examples and take the unselected points with the highest prediction
    entropy (natural log); entropy ties break toward the lowest index.

    Labels are read only at already-selected indices, simulating the oracle.
    """
    _check_initial(initial, schedule, m.n)
    if labels_for_training.n != m.n:
        raise ArgumentError("labels must cover the full pool")
    feats = cfg.feature_space(m)

    selected = list(initial.indices)
    for t in range(1, schedule.rounds):
        sel_arr = np.asarray(selected, dtype=np.int64)
        sel_labels = labels_for_training.labels[sel_arr]
        if len(np.unique(sel_labels)) < 2:
            raise DegenerateModelError(
                f"round {t}: selected pool holds {len(np.unique(sel_labels))} "
                "class(es); entropy ranking is constant"
            )
        sched = cfg.probe_schedule or max_entropy_schedule(len(selected))
        model = probe_train(
            feats.rows(sel_arr),
            LabelVector(sel_labels, num_classes=labels_for_training.num_classes),
            sched,
            seed=round_seed(cfg.seed, t),
        )
        candidates = np.setdiff1d(np.arange(m.n), sel_arr)
        probs = probe_predict_proba(model, feats.rows(candidates))
        ranked = rank_by_entropy(probs, candidates)
        selected.extend(int(i) for i in ranked[: schedule.delta(t)])
    return SelectionResult(
        indices=tuple(selected),
        strategy="max_entropy",
        seed=cfg.seed,
        budget_schedule=schedule.cumulative_sizes,
        round_boundaries=schedule.cumulative_sizes,
    )


def select_uniform_kmeans(
    m: EmbeddingMatrix, num_classes: int, per_cluster: int, cfg: StrategyConfig
) -> SelectionResult:
    """Cluster into num_classes clusters and take the per_cluster points
    nearest each center from within its cluster (label-free).

    A cluster smaller than per_cluster contributes all of its members; the
    shortfall is filled afterwards by the globally nearest unselected points
    to any center.
    """
    if per_cluster < 1:
        raise ArgumentError(f"per_cluster must be >= 1, got {per_cluster}")
    total = num_classes * per_cluster
    if total > m.n:
        raise ArgumentError(f"requested {total} samples from a pool of {m.n}")
    feats = cfg.feature_space(m)
    fit = _fit_kmeans(feats, num_classes, cfg.seed, cfg)
    x = feats.data.astype(np.float64)

    picked: list[int] = []
    for j in range(fit.k):
        members = np.flatnonzero(fit.assignment == j)
        if members.size == 0:
            continue
        diff = x[members] - fit.centers[j]
        d2 = np.einsum("nd,nd->n", diff, diff)
        order = members[np.lexsort((members, d2))]
        picked.extend(int(i) for i in order[:per_cluster])

    if len(picked) < total:
        # Fallback for undersized clusters: nearest leftovers to any center.
        leftover = np.setdiff1d(np.arange(m.n), np.asarray(picked, dtype=np.int64))
        d2_any = kmeans._sq_dists(x[leftover], fit.centers).min(axis=1)
        order = leftover[np.lexsort((leftover, d2_any))]
        picked.extend(int(i) for i in order[: total - len(picked)])

    return SelectionResult(indices=tuple(picked), strategy="uniform_kmeans", seed=cfg.seed)
