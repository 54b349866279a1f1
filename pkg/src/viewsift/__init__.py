"""Unsupervised viewbot detection for livestreaming view logs.

Broadcasts are modeled as multinomial distributions over a triangular
(start fraction, stay fraction) bin space; deviant broadcasts are flagged by a
moving IQR fence over log-binned viewcount, and their lockstep view clusters
are greedily pruned whenever removal reduces deviance from the bracket model.
"""

from .ingest import (
    BroadcastRecord,
    ViewRecord,
    ViewFeature,
    Workload,
    BracketIndex,
    parse_workload,
    compute_view_features,
    broadcast_features,
    build_bracket_index,
)
from .model import (
    TriHistogram,
    TriDistribution,
    bin_feature,
    fit_histogram,
    to_distribution,
    kl_divergence,
)
from .detect import (
    DeviancePoint,
    FenceModel,
    score_broadcasts,
    fit_fence,
    classify_broadcasts,
    emit_deviance_plot_data,
)
from .prune import (
    Instance,
    Partition,
    PruneOutcome,
    partition_views,
    deviance_reduction,
    prune_topmost,
    prune_iterative,
    prune_stepwise,
    exact_prune_oracle,
)
from .synth import (
    AttackSpec,
    LabeledWorkload,
    OverheadSpec,
    default_bracket_prior,
    sample_authentic_views,
    generate_attack,
    evaluate_detection,
    run_grid,
    estimate_ip_overhead,
    scaling_benchmark,
)
from .pipeline import PipelineConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "BroadcastRecord", "ViewRecord", "ViewFeature", "Workload", "BracketIndex",
    "parse_workload", "compute_view_features", "broadcast_features",
    "build_bracket_index",
    "TriHistogram", "TriDistribution", "bin_feature", "fit_histogram",
    "to_distribution", "kl_divergence",
    "DeviancePoint", "FenceModel", "score_broadcasts", "fit_fence",
    "classify_broadcasts", "emit_deviance_plot_data",
    "Instance", "Partition", "PruneOutcome", "partition_views",
    "deviance_reduction", "prune_topmost", "prune_iterative", "prune_stepwise",
    "exact_prune_oracle",
    "AttackSpec", "LabeledWorkload", "OverheadSpec", "default_bracket_prior",
    "sample_authentic_views", "generate_attack", "evaluate_detection",
    "run_grid", "estimate_ip_overhead", "scaling_benchmark",
    "PipelineConfig", "run_pipeline",
]
