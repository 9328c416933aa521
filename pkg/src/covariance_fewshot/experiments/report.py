"""
Versioned JSON experiment reports.

A report stores every per-seed result together with the aggregated rows derived from them. Means
and standard deviations (population, ``ddof=0``) are recomputed and checked when a report is read,
and unknown fields are rejected. Timings are kept in their own section so the rest of the
document is byte-stable across runs.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from covariance_fewshot.core import DistanceMode, LossBreakdown
from covariance_fewshot.errors import FormatError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
AGGREGATE_TOLERANCE = 1e-12


class CellKey(BaseModel):
    """Coordinates of one experiment cell, excluding the seed."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    shots: int
    mode: DistanceMode
    heads: int
    alpha: float
    beta: float
    gamma1: float
    gamma2: float

    def sort_key(self) -> tuple[Any, ...]:
        return (self.shots, self.mode.value, self.heads, self.alpha, self.beta, self.gamma1, self.gamma2)


class LossPoint(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    cls: float
    intra: float
    text_sep: float
    total: float

    @classmethod
    def from_breakdown(cls, breakdown: LossBreakdown) -> "LossPoint":
        return cls(**breakdown.as_dict())


class CellResult(BaseModel):
    """
    Outcome of one (cell, seed) run. Failed runs carry ``error`` and no accuracy.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    key: CellKey
    seed: int
    accuracy: float | None = None
    per_class_accuracy: dict[str, float] = Field(default_factory=dict)
    loss_trace: list[LossPoint] = Field(default_factory=list)
    logdet_agreement: float | None = None
    error: str | None = None

    @model_validator(mode="after")
    def _accuracy_or_error(self) -> "CellResult":
        if (self.accuracy is None) == (self.error is None):
            raise ValueError("exactly one of accuracy and error must be set")
        return self


def _mean_std(values: list[float]) -> tuple[float, float]:
    array = np.asarray(values, dtype=np.float64)
    return float(np.mean(array)), float(np.std(array))


class AggregateRow(BaseModel):
    """
    Seed aggregate of one cell.

    ``mean`` and ``std`` are None when every seed failed.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    key: CellKey
    label: str | None = None
    seeds: list[int]
    accuracies: list[float]
    mean: float | None
    std: float | None
    failed_seeds: list[int] = Field(default_factory=list)
    degraded: bool = False

    @model_validator(mode="after")
    def _aggregates_match_values(self) -> "AggregateRow":
        if len(self.seeds) != len(self.accuracies):
            raise ValueError("seeds and accuracies must have equal length")
        if not self.accuracies:
            if self.mean is not None or self.std is not None:
                raise ValueError("mean and std must be null without accuracies")
            return self
        mean, std = _mean_std(self.accuracies)
        if self.mean is None or self.std is None:
            raise ValueError("mean and std are required when accuracies are present")
        if not math.isclose(self.mean, mean, abs_tol=AGGREGATE_TOLERANCE):
            raise ValueError(f"stored mean {self.mean} does not match recomputed {mean}")
        if not math.isclose(self.std, std, abs_tol=AGGREGATE_TOLERANCE):
            raise ValueError(f"stored std {self.std} does not match recomputed {std}")
        return self

    @classmethod
    def from_values(
        cls, key: CellKey, seeds: list[int], accuracies: list[float], failed_seeds: list[int], label: str | None = None
    ) -> "AggregateRow":
        mean, std = _mean_std(accuracies) if accuracies else (None, None)
        return cls(
            key=key, label=label, seeds=seeds, accuracies=accuracies, mean=mean, std=std, failed_seeds=failed_seeds
        )


class ExperimentReport(BaseModel):
    """
    Self-describing record of a train, sweep or ablation run.

    Attributes:
        schema_version (int): Report schema version.
        command (str): ``train``, ``sweep`` or ``ablate``.
        data (str): Dataset the run used.
        normalize (bool): Whether features were L2-normalized when the dataset was loaded.
        config (dict): Snapshot of the base training configuration; each cell applies its own
            coordinates (seed, shots, grid values) on top.
        cells (list[CellResult]): Every per-seed result, sorted by key and seed.
        rows (list[AggregateRow]): Aggregates, sorted by key or in ablation order.
        timings (dict[str, float]): Wall-clock seconds; excluded from determinism guarantees.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION
    command: Literal["train", "sweep", "ablate"]
    data: str
    normalize: bool = True
    config: dict[str, Any]
    cells: list[CellResult]
    rows: list[AggregateRow]
    timings: dict[str, float] = Field(default_factory=dict)

    def to_json(self, *, include_timings: bool = True) -> str:
        """
        Deterministic JSON text: sorted keys, two-space indent.

        :param include_timings: Keep the ``timings`` section.
        :return: JSON document ending in a newline.
        """
        payload = self.model_dump(mode="json", exclude=None if include_timings else {"timings"})
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def failed_cells(self) -> list[CellResult]:
        return [cell for cell in self.cells if cell.error is not None]


def write_report(report: ExperimentReport, path: str | Path) -> None:
    """
    Write a report as JSON.

    :param report: Report to write.
    :param path: Destination file.
    :return: None
    """
    Path(path).write_text(report.to_json(), encoding="utf-8")
    log.info(f"Report written path={path} cells={len(report.cells)} rows={len(report.rows)}")


def read_report(path: str | Path) -> ExperimentReport:
    """
    Read and validate a report, recomputing every stored aggregate.

    :param path: Report file.
    :return: ExperimentReport.
    :raises FormatError: If the file is not a valid report.
    """
    try:
        return ExperimentReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as e:
        locations = ["/".join(str(part) for part in detail["loc"]) for detail in e.errors()]
        raise FormatError(f"Invalid experiment report {path}: {'; '.join(locations[:5])}") from e
