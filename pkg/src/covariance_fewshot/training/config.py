"""
Training configuration schema and its layered loading.

Layers, lowest precedence first: shot presets, named dataset preset, JSON config file, explicit overrides.
"""

import json
import logging
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from covariance_fewshot.core import IntraMetric, LossWeights, MahalanobisCenter, ShrinkageConvention, ShrinkageParams
from covariance_fewshot.errors import ConfigError
from covariance_fewshot.training.presets import (
    BASE_LR,
    DATASET_PRESETS,
    DEFAULT_HEADS,
    EPOCHS_BY_SHOTS,
    SHRINKAGE_BY_SHOTS,
    SMALL_BATCH_SIZE,
    WARMUP_EPOCHS,
    WARMUP_LR,
    dataset_preset,
)

log = logging.getLogger(__name__)

DEFAULT_SHOTS = 4


class LossWeightSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    beta: float = Field(default=0.1, ge=0, allow_inf_nan=False)


class ShrinkageSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma1: float = Field(default=600.0, ge=0, allow_inf_nan=False)
    gamma2: float = Field(default=100.0, ge=0, allow_inf_nan=False)
    convention: ShrinkageConvention = ShrinkageConvention.FECAM


class TrainConfig(BaseModel):
    """
    Everything a training run depends on. Two runs with equal configs and equal tasks are bit-identical.

    Attributes:
        shots (int): Samples per class K.
        epochs (int): Epoch budget.
        warmup_epochs (int): Epochs trained at the constant ``warmup_lr``.
        warmup_lr (float): Warmup learning rate.
        base_lr (float): Peak learning rate of the cosine schedule.
        batch_size (int): Samples per SGD step.
        weights (LossWeightSettings): Intra-class and separation loss weights.
        shrinkage (ShrinkageSettings): Covariance shrinkage strengths and convention.
        tau (float): Softmax temperature.
        epsilon (float): Distance stability offset.
        heads (int): Prototypes per class M.
        unified_cov_threshold (int): Shot counts up to this value use one pooled covariance.
        seed (int): Seed for initialization and batch shuffling.
        adapter_enabled (bool): Train the linear visual adapter.
        init_scale (float): Standard deviation of the prototype initialization noise.
        momentum (float): SGD momentum, 0 for plain SGD.
        adapter_lr_scale (float): Adapter learning rate relative to the prototype learning rate.
        intra_metric (IntraMetric): Distance used by the intra-class loss.
        mahalanobis_center (MahalanobisCenter): Point test-time Mahalanobis distances are measured from.
        preset (str | None): Name of the dataset preset applied, for provenance.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    shots: Literal[1, 2, 4, 8, 16] = DEFAULT_SHOTS
    epochs: int = Field(default=EPOCHS_BY_SHOTS[DEFAULT_SHOTS], ge=1)
    warmup_epochs: int = Field(default=WARMUP_EPOCHS, ge=0)
    warmup_lr: float = Field(default=WARMUP_LR, ge=0, allow_inf_nan=False)
    base_lr: float = Field(default=BASE_LR, gt=0, allow_inf_nan=False)
    batch_size: int = Field(default=SMALL_BATCH_SIZE, ge=1)
    weights: LossWeightSettings = LossWeightSettings()
    shrinkage: ShrinkageSettings = ShrinkageSettings()
    tau: float = Field(default=1.0, gt=0, allow_inf_nan=False)
    epsilon: float = Field(default=1e-6, gt=0, allow_inf_nan=False)
    heads: int = Field(default=DEFAULT_HEADS, ge=1)
    unified_cov_threshold: int = Field(default=1, ge=0)
    seed: int = Field(default=1, ge=0)
    adapter_enabled: bool = True
    init_scale: float = Field(default=0.1, ge=0, allow_inf_nan=False)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    adapter_lr_scale: float = Field(default=0.01, ge=0, allow_inf_nan=False)
    intra_metric: IntraMetric = IntraMetric.MAHALANOBIS
    mahalanobis_center: MahalanobisCenter = MahalanobisCenter.PROTOTYPE
    preset: str | None = None

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, value: str | None) -> str | None:
        if value is not None and value.strip().lower() not in DATASET_PRESETS:
            raise ValueError(f"unknown preset '{value}', expected one of {sorted(DATASET_PRESETS)}")
        return value

    @model_validator(mode="after")
    def _warmup_within_budget(self) -> "TrainConfig":
        if not self.epochs > self.warmup_epochs:
            raise ValueError(f"epochs ({self.epochs}) must exceed warmup_epochs ({self.warmup_epochs})")
        return self

    @classmethod
    def for_shots(cls, shots: int, **overrides: Any) -> "TrainConfig":
        """
        Config with the published defaults for ``shots``, updated by ``overrides``.

        :param shots: Samples per class K.
        :param overrides: Field overrides; nested models may be given as dictionaries.
        :return: Validated TrainConfig.
        :raises ConfigError: On schema violations.
        """
        return validate_train_config(deep_merge(shot_defaults(shots), overrides))

    def override(self, updates: Mapping[str, Any]) -> "TrainConfig":
        """
        Validated copy with nested ``updates`` applied.

        :param updates: Field overrides; nested models may be given as dictionaries.
        :return: New TrainConfig.
        :raises ConfigError: On schema violations.
        """
        return validate_train_config(deep_merge(self.snapshot(), updates))

    def snapshot(self) -> dict[str, Any]:
        """JSON-compatible dump of every field."""
        return self.model_dump(mode="json")

    def shrinkage_params(self) -> ShrinkageParams:
        return ShrinkageParams(
            gamma1=self.shrinkage.gamma1, gamma2=self.shrinkage.gamma2, convention=self.shrinkage.convention
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.weights.alpha, beta=self.weights.beta)


def deep_merge(base: Mapping[str, Any], updates: Mapping[str, Any]) -> dict[str, Any]:
    """
    Recursively merge ``updates`` into a copy of ``base``; nested mappings merge, everything else replaces.

    :param base: Lower-precedence values.
    :param updates: Higher-precedence values.
    :return: Merged dictionary.
    """
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def shot_defaults(shots: Any) -> dict[str, Any]:
    """
    Shot-keyed defaults: epoch budget and shrinkage strengths.

    Unsupported or non-integer shot values produce only the ``shots`` key so validation reports them.

    :param shots: Samples per class K, as read from overrides or a config file.
    :return: Override dictionary.
    """
    defaults: dict[str, Any] = {"shots": shots}
    if isinstance(shots, int) and not isinstance(shots, bool) and shots in EPOCHS_BY_SHOTS:
        gamma1, gamma2 = SHRINKAGE_BY_SHOTS[shots]
        defaults["epochs"] = EPOCHS_BY_SHOTS[shots]
        defaults["shrinkage"] = {"gamma1": gamma1, "gamma2": gamma2}
    return defaults


def _field_paths(error: ValidationError) -> list[str]:
    paths = []
    for detail in error.errors():
        location = ".".join(str(part) for part in detail["loc"]) or "<root>"
        paths.append(f"{location}: {detail['msg']}")
    return paths


def validate_train_config(data: Mapping[str, Any]) -> TrainConfig:
    """
    Validate raw configuration data.

    :param data: Raw configuration mapping.
    :return: TrainConfig.
    :raises ConfigError: Listing the dotted path of every offending field.
    """
    try:
        return TrainConfig.model_validate(dict(data))
    except ValidationError as e:
        raise ConfigError("Invalid training configuration", _field_paths(e)) from e


def _read_config_file(path: Path) -> dict[str, Any]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file is not valid JSON: {path} (line {e.lineno}, column {e.colno})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file must hold a JSON object: {path}")
    return data


def load_train_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> TrainConfig:
    """
    Build a TrainConfig from presets, an optional JSON file and explicit overrides.

    The shot count and preset name are looked up in ``overrides`` first, then in the file.

    :param path: Optional JSON config file.
    :param overrides: Highest-precedence values, typically from CLI flags.
    :return: Validated TrainConfig.
    :raises ConfigError: On unreadable files, unknown presets or schema violations.
    """
    file_data = _read_config_file(Path(path)) if path is not None else {}
    explicit = dict(overrides or {})

    shots = explicit.get("shots", file_data.get("shots", DEFAULT_SHOTS))
    layered = shot_defaults(shots)

    preset_name = explicit.get("preset", file_data.get("preset"))
    if preset_name is not None:
        try:
            layered = deep_merge(layered, dataset_preset(str(preset_name)))
        except KeyError as e:
            raise ConfigError(f"Unknown dataset preset '{preset_name}'", ["preset"]) from e

    layered = deep_merge(deep_merge(layered, file_data), explicit)
    config = validate_train_config(layered)
    log.debug(f"Loaded train config path={path} shots={config.shots} preset={config.preset}")
    return config
