"""
Six-row ablation of the method's components.

Rows, in order:

1. ``baseline``: one head, no auxiliary losses, Euclidean evaluation.
2. ``+CA``: the baseline model evaluated with Mahalanobis distance.
3. ``+CA+intra``: one head with the intra-class loss.
4. ``+CA+DA``: M heads, no auxiliary losses.
5. ``+CA+intra+DA``: M heads with the intra-class loss.
6. ``full``: M heads with both auxiliary losses.
"""

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

from covariance_fewshot.core import DistanceMode
from covariance_fewshot.data import EmbeddingSet
from covariance_fewshot.experiments.report import AggregateRow, CellResult
from covariance_fewshot.experiments.runner import CellJob
from covariance_fewshot.experiments.sweep import ConfigFactory, aggregate_cells, run_jobs
from covariance_fewshot.training import TrainConfig
from covariance_fewshot.training.presets import DEFAULT_HEADS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationRow:
    label: str
    multi_head: bool
    intra: bool
    separation: bool
    mode: DistanceMode


ABLATION_ROWS = (
    AblationRow("baseline", multi_head=False, intra=False, separation=False, mode=DistanceMode.EUCLIDEAN),
    AblationRow("+CA", multi_head=False, intra=False, separation=False, mode=DistanceMode.MAHALANOBIS),
    AblationRow("+CA+intra", multi_head=False, intra=True, separation=False, mode=DistanceMode.MAHALANOBIS),
    AblationRow("+CA+DA", multi_head=True, intra=False, separation=False, mode=DistanceMode.MAHALANOBIS),
    AblationRow("+CA+intra+DA", multi_head=True, intra=True, separation=False, mode=DistanceMode.MAHALANOBIS),
    AblationRow("full", multi_head=True, intra=True, separation=True, mode=DistanceMode.MAHALANOBIS),
)


def row_overrides(row: AblationRow, reference: TrainConfig) -> dict[str, Any]:
    """
    Overrides turning the reference configuration into the configuration of ``row``.

    Enabled components keep the reference values. Multi-head rows use the reference head count,
    or ``DEFAULT_HEADS`` when the reference has a single head.

    :param row: Ablation row.
    :param reference: Fully configured run (heads, alpha, beta).
    :return: Override dictionary.
    """
    heads = reference.heads if reference.heads > 1 else DEFAULT_HEADS
    return {
        "heads": heads if row.multi_head else 1,
        "weights": {
            "alpha": reference.weights.alpha if row.intra else 0.0,
            "beta": reference.weights.beta if row.separation else 0.0,
        },
    }


def build_ablation_jobs(factory: ConfigFactory, seeds: Sequence[int]) -> list[CellJob]:
    """
    One job per distinct (row configuration, seed); rows that differ only by evaluation mode share a job.

    :param factory: Maps overrides to a TrainConfig.
    :param seeds: Seeds to run.
    :return: Jobs.
    """
    jobs = []
    for seed in seeds:
        reference = factory({"seed": seed})
        grouped: dict[tuple[int, float, float], tuple[dict[str, Any], list[DistanceMode]]] = {}
        for row in ABLATION_ROWS:
            overrides = row_overrides(row, reference)
            signature = (overrides["heads"], overrides["weights"]["alpha"], overrides["weights"]["beta"])
            _, modes = grouped.setdefault(signature, (overrides, []))
            if row.mode not in modes:
                modes.append(row.mode)
        for overrides, modes in grouped.values():
            jobs.append(CellJob(config=factory({**overrides, "seed": seed}), modes=tuple(modes)))
    return jobs


def label_rows(rows: Sequence[AggregateRow], factory: ConfigFactory, seed: int) -> list[AggregateRow]:
    """
    Pick the aggregate of each ablation row, in ablation order, and attach its label.

    :param rows: Aggregates keyed by cell.
    :param factory: The factory the jobs were built with.
    :param seed: Any seed of the run; keys do not depend on it.
    :return: Six labeled rows.
    """
    by_key = {row.key: row for row in rows}
    reference = factory({"seed": seed})
    labeled = []
    for ablation in ABLATION_ROWS:
        job = CellJob(config=factory({**row_overrides(ablation, reference), "seed": seed}), modes=(ablation.mode,))
        labeled.append(by_key[job.key(ablation.mode)].model_copy(update={"label": ablation.label}))
    return labeled


def run_ablation(
    embeddings: EmbeddingSet, factory: ConfigFactory, seeds: Sequence[int], workers: int
) -> tuple[list[CellResult], list[AggregateRow]]:
    """
    Run the six ablation configurations over ``seeds``.

    :param embeddings: Source data.
    :param factory: Maps overrides to a TrainConfig.
    :param seeds: Seeds to aggregate over.
    :param workers: Maximum concurrent cells.
    :return: ``(cells, rows)`` with rows in ablation order.
    """
    jobs = build_ablation_jobs(factory, seeds)
    log.info(f"Ablation start rows={len(ABLATION_ROWS)} seeds={list(seeds)} jobs={len(jobs)}")
    cells = run_jobs(embeddings, jobs, workers)
    rows = label_rows(aggregate_cells(cells), factory, seeds[0])
    log.info("Ablation complete")
    return cells, rows


def _format_accuracy(row: AggregateRow) -> str:
    if row.mean is None or row.std is None:
        return "failed"
    return f"{100 * row.mean:6.2f} +/- {100 * row.std:5.2f}"


def print_ablation_table(rows: Sequence[AggregateRow], header: Mapping[str, Any] | None = None) -> None:
    """
    Print the ablation rows as a text table.

    :param rows: Labeled rows in ablation order.
    :param header: Optional context printed above the table.
    :return: None. Prints to stdout.
    """
    log.info(f"Print ablation table start rows={len(rows)}")
    if header:
        print("\n" + " ".join(f"{k}={v}" for k, v in header.items()))

    print(f"\n{'Configuration':<16}{'Heads':>6}{'Alpha':>9}{'Beta':>9}  {'Mode':<12}{'Accuracy (%)':>18}")
    for row in rows:
        key = row.key
        print(
            f"{row.label or '':<16}{key.heads:>6}{key.alpha:>9g}{key.beta:>9g}  "
            f"{key.mode.value:<12}{_format_accuracy(row):>18}"
        )
    log.info("Print ablation table complete")
