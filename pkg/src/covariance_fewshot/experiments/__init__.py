from .ablation import ABLATION_ROWS, AblationRow, print_ablation_table, run_ablation
from .report import (
    SCHEMA_VERSION,
    AggregateRow,
    CellKey,
    CellResult,
    ExperimentReport,
    LossPoint,
    read_report,
    write_report,
)
from .runner import ALL_MODES, CellJob, measure_logdet_agreement, run_cell
from .sweep import (
    DEFAULT_DEGRADATION_MARGIN,
    SweepGrid,
    aggregate_cells,
    build_jobs,
    overriding_factory,
    resolve_workers,
    run_jobs,
    run_sweep,
)

__all__ = [
    "ABLATION_ROWS",
    "AblationRow",
    "print_ablation_table",
    "run_ablation",
    "SCHEMA_VERSION",
    "AggregateRow",
    "CellKey",
    "CellResult",
    "ExperimentReport",
    "LossPoint",
    "read_report",
    "write_report",
    "ALL_MODES",
    "CellJob",
    "measure_logdet_agreement",
    "run_cell",
    "DEFAULT_DEGRADATION_MARGIN",
    "SweepGrid",
    "aggregate_cells",
    "build_jobs",
    "overriding_factory",
    "resolve_workers",
    "run_jobs",
    "run_sweep",
]
