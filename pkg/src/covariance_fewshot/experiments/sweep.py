"""
Grid sweeps over shots, seeds, heads, loss weights and shrinkage strengths.

Cells run in a bounded thread pool. A cell that fails with a library error is recorded and the
sweep continues, unless the caller asks to fail fast; results are merged by key, so the report does not
depend on completion order.
"""

import itertools
import logging
import os
from collections import defaultdict
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import Future, ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any

from covariance_fewshot.core import DistanceMode
from covariance_fewshot.data import EmbeddingSet
from covariance_fewshot.errors import ConfigError, CovarianceFewShotError, EmptyGridError
from covariance_fewshot.experiments.report import AggregateRow, CellKey, CellResult
from covariance_fewshot.experiments.runner import ALL_MODES, CellJob, run_cell
from covariance_fewshot.training import TrainConfig, deep_merge

log = logging.getLogger(__name__)

THREADS_ENV_VAR = "CAM_THREADS"
DEFAULT_MAX_WORKERS = 4
DEFAULT_DEGRADATION_MARGIN = 0.02

ConfigFactory = Callable[[Mapping[str, Any]], TrainConfig]


@dataclass(frozen=True)
class SweepGrid:
    """
    Axes of a sweep. ``None`` on an optional axis keeps the configured value.

    Attributes:
        shots (tuple[int, ...]): Shot counts K.
        seeds (tuple[int, ...]): Seeds.
        modes (tuple[DistanceMode, ...]): Evaluation modes.
        heads (tuple[int | None, ...]): Prototypes per class M.
        alphas (tuple[float | None, ...]): Intra-class loss weights.
        betas (tuple[float | None, ...]): Separation loss weights.
        gamma1s (tuple[float | None, ...]): Identity shrinkage strengths.
        gamma2s (tuple[float | None, ...]): Off-diagonal shrinkage strengths.
    """

    shots: tuple[int, ...]
    seeds: tuple[int, ...]
    modes: tuple[DistanceMode, ...] = ALL_MODES
    heads: tuple[int | None, ...] = (None,)
    alphas: tuple[float | None, ...] = (None,)
    betas: tuple[float | None, ...] = (None,)
    gamma1s: tuple[float | None, ...] = (None,)
    gamma2s: tuple[float | None, ...] = (None,)

    def validate(self) -> None:
        for name in ("shots", "seeds", "modes", "heads", "alphas", "betas", "gamma1s", "gamma2s"):
            if not getattr(self, name):
                raise EmptyGridError(f"Sweep axis '{name}' is empty")

    def cell_overrides(self) -> list[dict[str, Any]]:
        """
        Config overrides of every (shots, seed, heads, alpha, beta, gamma1, gamma2) combination.

        :return: Override dictionaries in grid order.
        :raises EmptyGridError: If any axis is empty.
        """
        self.validate()
        overrides = []
        axes = (self.shots, self.seeds, self.heads, self.alphas, self.betas, self.gamma1s, self.gamma2s)
        for shots, seed, heads, alpha, beta, gamma1, gamma2 in itertools.product(*axes):
            cell: dict[str, Any] = {"shots": shots, "seed": seed}
            if heads is not None:
                cell["heads"] = heads
            weights = {k: v for k, v in (("alpha", alpha), ("beta", beta)) if v is not None}
            if weights:
                cell["weights"] = weights
            shrinkage = {k: v for k, v in (("gamma1", gamma1), ("gamma2", gamma2)) if v is not None}
            if shrinkage:
                cell["shrinkage"] = shrinkage
            overrides.append(cell)
        return overrides


def resolve_workers(env: Mapping[str, str] | None = None) -> int:
    """
    Worker-pool size from ``CAM_THREADS``, defaulting to ``min(4, cpu_count)``.

    :param env: Environment mapping, ``os.environ`` by default.
    :return: Positive worker count.
    :raises ConfigError: If the variable is not a positive integer.
    """
    environment = os.environ if env is None else env
    raw = environment.get(THREADS_ENV_VAR)
    if raw is None or raw.strip() == "":
        return max(1, min(DEFAULT_MAX_WORKERS, os.cpu_count() or 1))
    try:
        workers = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got '{raw}'") from e
    if workers < 1:
        raise ConfigError(f"{THREADS_ENV_VAR} must be a positive integer, got {workers}")
    return workers


def build_jobs(
    factory: ConfigFactory, cell_overrides: Iterable[Mapping[str, Any]], modes: Sequence[DistanceMode]
) -> list[CellJob]:
    """
    Validate every cell's configuration before anything runs.

    :param factory: Maps overrides to a TrainConfig.
    :param cell_overrides: Per-cell overrides.
    :param modes: Evaluation modes of every cell.
    :return: Jobs in input order.
    :raises ConfigError: On the first invalid cell.
    """
    return [CellJob(config=factory(overrides), modes=tuple(modes)) for overrides in cell_overrides]


def _submit_all_jobs(
    executor: ThreadPoolExecutor, embeddings: EmbeddingSet, jobs: Sequence[CellJob]
) -> dict[Future, CellJob]:
    futures = {executor.submit(run_cell, embeddings, job): job for job in jobs}
    log.info(f"Submitted cells: total={len(futures)}")
    return futures


def _drain_results_loop(
    futures: dict[Future, CellJob],
) -> tuple[list[CellResult], list[tuple[CellJob, CovarianceFewShotError]]]:
    results: list[CellResult] = []
    failures: list[tuple[CellJob, CovarianceFewShotError]] = []
    total = len(futures)
    done = 0
    for future in as_completed(list(futures)):
        job = futures.pop(future)
        done += 1
        try:
            results.extend(future.result())
            log.info(f"[{done}/{total}] OK shots={job.config.shots} seed={job.config.seed}")
        except CovarianceFewShotError as e:
            log.warning(f"[{done}/{total}] Cell failed shots={job.config.shots} seed={job.config.seed}: {e}")
            results.extend(job.failed(e))
            failures.append((job, e))
        except Exception:
            log.exception(f"Unexpected error in cell shots={job.config.shots} seed={job.config.seed}")
            raise
    return results, failures


def run_jobs(
    embeddings: EmbeddingSet, jobs: Sequence[CellJob], workers: int, *, fail_fast: bool = False
) -> list[CellResult]:
    """
    Run cells concurrently and return their results sorted by key and seed.

    :param embeddings: Source data shared read-only by every cell.
    :param jobs: Cells to run.
    :param workers: Maximum concurrent cells.
    :param fail_fast: Re-raise the error of the earliest failed job (in ``jobs`` order) once every
        cell has finished, instead of recording failures.
    :return: Results of every (cell, mode), failures included.
    :raises CovarianceFewShotError: With ``fail_fast``, the first failed job's error.
    """
    if not jobs:
        raise EmptyGridError("Nothing to run: the job list is empty")

    log.info(f"Running cells start count={len(jobs)} workers={workers} fail_fast={fail_fast}")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results, failures = _drain_results_loop(_submit_all_jobs(executor, embeddings, jobs))

    if fail_fast and failures:
        position = {id(job): index for index, job in enumerate(jobs)}
        job, error = min(failures, key=lambda failure: position[id(failure[0])])
        log.error(f"Run FAILED failed={len(failures)}/{len(jobs)} first_seed={job.config.seed}")
        raise error
    return sorted(results, key=lambda r: (r.key.sort_key(), r.seed))


def aggregate_cells(
    cells: Sequence[CellResult], degradation_margin: float = DEFAULT_DEGRADATION_MARGIN
) -> list[AggregateRow]:
    """
    Aggregate per-seed results by key and flag degraded rows.

    A row is degraded when its mean trails the best mean of the same (shots, mode) group by more
    than ``degradation_margin``.

    :param cells: Per-seed results.
    :param degradation_margin: Accuracy gap that flags a row.
    :return: Rows sorted by key.
    """
    successes: defaultdict[CellKey, list[CellResult]] = defaultdict(list)
    failures: defaultdict[CellKey, list[int]] = defaultdict(list)
    for cell in cells:
        if cell.error is None:
            successes[cell.key].append(cell)
        else:
            failures[cell.key].append(cell.seed)

    rows = []
    for key in sorted(set(successes) | set(failures), key=CellKey.sort_key):
        ordered = sorted(successes[key], key=lambda c: c.seed)
        rows.append(
            AggregateRow.from_values(
                key=key,
                seeds=[c.seed for c in ordered],
                accuracies=[float(c.accuracy) for c in ordered],  # type: ignore[arg-type]
                failed_seeds=sorted(failures[key]),
            )
        )

    best: dict[tuple[int, str], float] = {}
    for row in rows:
        if row.mean is not None:
            group = (row.key.shots, row.key.mode.value)
            best[group] = max(best.get(group, row.mean), row.mean)

    flagged = []
    for row in rows:
        group_best = best.get((row.key.shots, row.key.mode.value))
        degraded = row.mean is not None and group_best is not None and row.mean < group_best - degradation_margin
        flagged.append(row.model_copy(update={"degraded": degraded}))
        if degraded:
            log.info(f"Degraded row key={row.key.sort_key()} mean={row.mean:.4f} best={group_best:.4f}")
    return flagged


def run_sweep(
    embeddings: EmbeddingSet,
    grid: SweepGrid,
    factory: ConfigFactory,
    workers: int,
    degradation_margin: float = DEFAULT_DEGRADATION_MARGIN,
) -> tuple[list[CellResult], list[AggregateRow]]:
    """
    Run the Cartesian product of ``grid`` and aggregate over seeds.

    :param embeddings: Source data.
    :param grid: Sweep axes.
    :param factory: Maps cell overrides to a TrainConfig (presets and user config applied).
    :param workers: Maximum concurrent cells.
    :param degradation_margin: Accuracy gap that flags a row as degraded.
    :return: ``(cells, rows)``.
    :raises EmptyGridError: If any axis is empty.
    :raises ConfigError: If any cell's configuration is invalid.
    """
    jobs = build_jobs(factory, grid.cell_overrides(), grid.modes)
    cells = run_jobs(embeddings, jobs, workers)
    return cells, aggregate_cells(cells, degradation_margin)


def overriding_factory(base: Mapping[str, Any], loader: ConfigFactory) -> ConfigFactory:
    """
    Factory that layers cell overrides over ``base`` before handing them to ``loader``.

    :param base: Overrides shared by every cell (typically CLI flags).
    :param loader: Final config builder, e.g. ``load_train_config`` bound to a config file.
    :return: ConfigFactory.
    """

    def factory(cell: Mapping[str, Any]) -> TrainConfig:
        return loader(deep_merge(base, cell))

    return factory
