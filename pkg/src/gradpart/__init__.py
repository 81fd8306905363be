"""Group inference by gradient-space clustering, with outlier detection
and group-robust downstream training."""

from .clustering import (
    OUTLIER_LABEL,
    ClusterAssignment,
    DbscanParams,
    SilhouetteUndefined,
    adjusted_rand_index,
    dbscan,
    kmeans,
    save_assignment_csv,
    silhouette,
)
from .dataset import (
    CsvSchema,
    Dataset,
    Sample,
    generate_synthetic,
    group_stats,
    load_csv,
    save_csv,
    split,
    take,
)
from .gradspace import (
    DistanceMatrix,
    GradientMatrix,
    distance_matrix,
    extract_gradients,
    logistic_gradient_closed_form,
)
from .groupinfer import (
    UNASSIGNED_LABEL,
    GroupInferenceResult,
    default_grid,
    feasp,
    grasp,
    inference_ari,
    sweep_report,
    true_group_partition,
)
from .model import (
    Arch,
    ModelParams,
    TrainConfig,
    accuracy,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    losses,
    per_sample_gradients,
    per_sample_loss,
    predict,
    save_checkpoint,
    train_erm,
)
from .robusttrain import (
    EvalReport,
    GroupWeights,
    evaluate,
    format_eval_table,
    group_fractions,
    save_eval_report,
    train_gdro,
)

__all__ = [
    "Arch",
    "ClusterAssignment",
    "CsvSchema",
    "Dataset",
    "DbscanParams",
    "DistanceMatrix",
    "EvalReport",
    "GradientMatrix",
    "GroupInferenceResult",
    "GroupWeights",
    "ModelParams",
    "OUTLIER_LABEL",
    "Sample",
    "SilhouetteUndefined",
    "TrainConfig",
    "UNASSIGNED_LABEL",
    "accuracy",
    "adjusted_rand_index",
    "dbscan",
    "default_grid",
    "distance_matrix",
    "evaluate",
    "extract_gradients",
    "feasp",
    "format_eval_table",
    "forward",
    "forward_batch",
    "generate_synthetic",
    "grasp",
    "group_fractions",
    "group_stats",
    "inference_ari",
    "init_params",
    "kmeans",
    "load_checkpoint",
    "load_csv",
    "logistic_gradient_closed_form",
    "losses",
    "per_sample_gradients",
    "per_sample_loss",
    "predict",
    "save_assignment_csv",
    "save_checkpoint",
    "save_eval_report",
    "save_csv",
    "silhouette",
    "split",
    "sweep_report",
    "take",
    "train_erm",
    "train_gdro",
    "true_group_partition",
]
