"""Broad multi-instance multi-label learning.

Pipeline stages: broad random-feature mapping, auto-weighted label
enhancement, Hausdorff-clustered multi-instance probabilistic regression,
and softmax/threshold decision optimization, plus the MIML data model and
evaluation metrics needed to exercise them.
"""

from .awlel import (
    AwlelConfig,
    AwlelModel,
    AwlelState,
    awlel_predict_scores,
    build_augmented_design,
    build_retarget_nodes,
    compute_sample_weights,
    fit_awlel,
    update_T,
)
from .bls import BlsConfig, BlsFeatureMap, Standardizer, bls_predict, bls_train, fit_feature_map, transform
from .data import (
    Bag,
    DatasetSplit,
    MimlDataset,
    generate_synthetic,
    load_dataset,
    patchify_image,
    save_dataset,
    shuffle_instances,
    split_dataset,
)
from .errors import (
    BmimlError,
    ConfigError,
    DimensionError,
    ModelFormatError,
    NumericalError,
    ParseError,
    SingularSystemError,
)
from .hausdorff import active_backend
from .metrics import (
    MetricsReport,
    average_precision,
    cross_validate,
    hamming_loss,
    one_error,
    ranking_loss,
)
from .numerics import (
    apply_activation,
    random_matrix,
    ridge_solve,
    softmax,
    stream_rng,
    weighted_ridge_solve,
)
from .pipeline import (
    BmimlModel,
    PipelineConfig,
    PredictionSet,
    clip_scores,
    decide,
    fit_bmiml,
    load_model,
    predict_bags,
    save_model,
)
from .smipr import (
    ClusterModel,
    SmiprConfig,
    SmiprNet,
    cluster_bags,
    fit_smipr,
    hausdorff,
    pairwise_bag_distances,
    select_medoid,
    smipr_forward,
    smipr_train_epoch,
    sse_loss,
)

__version__ = "0.1.0"

__all__ = [
    "AwlelConfig", "AwlelModel", "AwlelState", "Bag", "BlsConfig", "BlsFeatureMap",
    "BmimlError", "BmimlModel", "ClusterModel", "ConfigError", "DatasetSplit",
    "DimensionError", "MetricsReport", "MimlDataset", "ModelFormatError",
    "NumericalError", "ParseError", "PipelineConfig", "PredictionSet",
    "SingularSystemError", "SmiprConfig", "SmiprNet", "Standardizer",
    "active_backend", "apply_activation", "average_precision", "awlel_predict_scores",
    "bls_predict", "bls_train", "build_augmented_design", "build_retarget_nodes",
    "clip_scores", "cluster_bags", "compute_sample_weights", "cross_validate",
    "decide", "fit_awlel", "fit_bmiml", "fit_feature_map", "fit_smipr",
    "generate_synthetic", "hamming_loss", "hausdorff", "load_dataset", "load_model",
    "one_error", "pairwise_bag_distances", "patchify_image", "predict_bags",
    "random_matrix", "ranking_loss", "ridge_solve", "save_dataset", "save_model",
    "select_medoid", "shuffle_instances", "smipr_forward", "smipr_train_epoch",
    "softmax", "split_dataset", "sse_loss", "stream_rng", "transform",
    "update_T", "weighted_ridge_solve",
]
