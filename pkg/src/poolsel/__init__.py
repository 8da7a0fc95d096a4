"""Low-budget sample selection over precomputed feature embeddings."""

from .classifiers import (
    ProbeModel,
    TrainSchedule,
    default_batch_size,
    knn_predict,
    linear_eval_schedule,
    max_entropy_schedule,
    probe_predict,
    probe_predict_proba,
    probe_train,
)
from .errors import (
    ArgumentError,
    DataError,
    DegenerateModelError,
    DivergenceError,
    FormatError,
    IoError,
    PoolselError,
    TruncationError,
)
from .kmeans import Centroids, kmeanspp_init, lloyd_fit, nearest_to_centroids
from .metrics import (
    MetricsReport,
    build_report,
    category_coverage,
    mean_per_class_accuracy,
    occurrence_histogram,
    top1_accuracy,
)
from .store import (
    EmbeddingMatrix,
    LabelVector,
    NormStats,
    SelectionResult,
    l2_normalize,
    load_embeddings,
    load_labels,
    load_selection,
    save_embeddings,
    save_labels,
    save_selection,
    standardize,
)
from .strategies import (
    BudgetSchedule,
    StrategyConfig,
    select_coreset,
    select_kmeans_multi,
    select_kmeans_single,
    select_max_entropy,
    select_random,
    select_uniform,
    select_uniform_kmeans,
)
from .synth import BlobSpec, make_blob_split, make_blobs, make_longtail

__version__ = "0.1.0"
