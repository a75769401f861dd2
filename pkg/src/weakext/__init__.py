"""Weak supervision with embedding-based vote extension.

Extends noisy source votes to nearby points in a pre-trained embedding
space, recovers source accuracies by a method-of-moments estimator, and
produces probabilistic labels -- plus smoothness diagnostics, bound
evaluation, radius tuning, and a synthetic experiment harness.
"""

from .core import (
    DataError,
    DegeneracyError,
    EmbeddingSet,
    LabelModelParams,
    LabelVector,
    Metric,
    RadiusConfig,
    VoteMatrix,
    Weighting,
    cosine_distance,
    load_embeddings,
    load_labels,
    load_votes,
    save_embeddings,
    save_labels,
    save_votes,
)
from .diagnostics import (
    DiagnosticsReport,
    LipschitzProfile,
    default_radius_grid,
    diagnose,
    ensemble_risk_bound,
    estimate_profile,
    estimation_error_bound,
    extended_accuracy_lower_bound,
    extended_source_risk_bound,
    generalization_lift_lower_bound,
    label_smoothness_bound,
)
from .experiments import (
    MetricsReport,
    SweepResult,
    SyntheticTask,
    evaluate,
    generate_checkerboard,
    refine_radii,
    sweep_radius,
    theory_guided_radius,
    tune_shared_radius,
)
from .extension import (
    ExtensionReport,
    NeighborSet,
    coverage,
    extend_votes,
    min_overlap,
    neighbors_in_support,
)
from .label_model import (
    TripletAssignment,
    estimate_accuracies,
    majority_vote,
    posterior,
    predict,
    select_triplets,
)

__version__ = "0.1.0"
