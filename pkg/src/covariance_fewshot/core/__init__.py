from .classifier import (
    DistanceMode,
    MahalanobisCenter,
    Prediction,
    PrototypeBank,
    classify,
    classify_batch,
    distance_matrix,
    ensemble_predict,
    ensemble_predict_batch,
    predict_proba,
    probabilities_from_cosines,
    probabilities_from_distances,
)
from .gaussian_core import (
    ClassGaussian,
    ShrinkageConvention,
    ShrinkageParams,
    build_class_gaussian,
    build_class_gaussians,
    build_unified_gaussians,
    estimate_covariance,
    estimate_mean,
    identity_gaussians,
    mahalanobis_sq,
    mahalanobis_sq_batch,
    normalize_cov,
    shrink,
)
from .losses import (
    IntraMetric,
    LossBreakdown,
    LossGradient,
    LossWeights,
    adapter_gradient,
    loss_cls,
    loss_intra,
    loss_intra_euclidean,
    loss_intra_manhattan,
    loss_text_sep,
    total_loss,
)

__all__ = [
    "ClassGaussian",
    "ShrinkageConvention",
    "ShrinkageParams",
    "build_class_gaussian",
    "build_class_gaussians",
    "build_unified_gaussians",
    "estimate_covariance",
    "estimate_mean",
    "identity_gaussians",
    "mahalanobis_sq",
    "mahalanobis_sq_batch",
    "normalize_cov",
    "shrink",
    "DistanceMode",
    "MahalanobisCenter",
    "Prediction",
    "PrototypeBank",
    "classify",
    "classify_batch",
    "distance_matrix",
    "ensemble_predict",
    "ensemble_predict_batch",
    "predict_proba",
    "probabilities_from_cosines",
    "probabilities_from_distances",
    "IntraMetric",
    "LossBreakdown",
    "LossGradient",
    "LossWeights",
    "adapter_gradient",
    "loss_cls",
    "loss_intra",
    "loss_intra_euclidean",
    "loss_intra_manhattan",
    "loss_text_sep",
    "total_loss",
]
