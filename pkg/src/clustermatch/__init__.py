"""Cross-domain open-world discovery on precomputed embedding sets."""

__version__ = "0.1.0"

from .assignment import AssignmentResult, solve_assignment
from .data import (
    ClassCatalog,
    ConfigError,
    DiscoveryConfig,
    EmbeddingSet,
    FormatError,
    PredictionSet,
    load_config,
    load_embeddings,
    save_embeddings,
)
from .evaluation import EvalReport, evaluate, h_score, seen_accuracy, unseen_accuracy
from .finetune import (
    Adapter,
    DiscoveryModel,
    finetune,
    gradient_check,
    init_model,
    load_model,
    loss_reg,
    loss_supervised,
    predict,
    save_model,
)
from .kmeans import KMeansResult, kmeans_fit, normalize_centroids
from .matching import (
    MatchResult,
    assemble_classifier,
    co_occurrence,
    column_softmax,
    match,
    split_prototypes,
    threshold_match,
)
from .pipeline import (
    ClusteringReport,
    PipelineError,
    RunReport,
    discover,
    estimate_num_classes,
    kmeans_baseline,
    simple_baseline,
    sweep_entropy_thresholds,
)
from .prototypes import PrototypeBank, load_bank, save_bank, target_prototypes, train_seen_prototypes
from .synthgen import PRESETS, Scenario, generate, write_scenario
