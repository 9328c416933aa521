import math

from covariance_fewshot.training.config import TrainConfig


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """
    Learning rate of an epoch: constant ``warmup_lr`` during warmup, then cosine decay from ``base_lr``.

    After warmup, ``lr = base_lr * 0.5 * (1 + cos(pi * t))`` with
    ``t = (epoch - warmup_epochs) / (epochs - warmup_epochs)``.

    :param epoch: Zero-based epoch in ``[0, epochs)``.
    :param config: Training configuration.
    :return: Learning rate.
    """
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"Epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.warmup_epochs:
        return config.warmup_lr

    progress = (epoch - config.warmup_epochs) / (config.epochs - config.warmup_epochs)
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
