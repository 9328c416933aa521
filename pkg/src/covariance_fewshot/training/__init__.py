from .config import (
    LossWeightSettings,
    ShrinkageSettings,
    TrainConfig,
    deep_merge,
    load_train_config,
    shot_defaults,
    validate_train_config,
)
from .schedule import cosine_lr
from .trainer import (
    EvaluationResult,
    TrainedModel,
    VisualAdapter,
    evaluate,
    init_model,
    predict,
    train,
)

__all__ = [
    "LossWeightSettings",
    "ShrinkageSettings",
    "TrainConfig",
    "deep_merge",
    "load_train_config",
    "shot_defaults",
    "validate_train_config",
    "cosine_lr",
    "EvaluationResult",
    "TrainedModel",
    "VisualAdapter",
    "evaluate",
    "init_model",
    "predict",
    "train",
]
