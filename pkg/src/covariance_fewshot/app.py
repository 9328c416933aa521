"""
Command-line interface: ``gen``, ``train``, ``sweep`` and ``ablate``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import logging
import time
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

from covariance_fewshot.core import DistanceMode, ShrinkageConvention
from covariance_fewshot.data import (
    EmbeddingSet,
    SyntheticSpec,
    gen_synthetic,
    load_embeddings,
    save_embeddings,
    save_embeddings_csv,
)
from covariance_fewshot.errors import EXIT_OK, CovarianceFewShotError, EmptyGridError, UsageError
from covariance_fewshot.experiments import (
    ALL_MODES,
    DEFAULT_DEGRADATION_MARGIN,
    ExperimentReport,
    SweepGrid,
    aggregate_cells,
    build_jobs,
    overriding_factory,
    print_ablation_table,
    resolve_workers,
    run_ablation,
    run_jobs,
    run_sweep,
    write_report,
)
from covariance_fewshot.logging_config import add_file_logging
from covariance_fewshot.training import TrainConfig, load_train_config
from covariance_fewshot.training.presets import DEFAULT_SEEDS, EPOCHS_BY_SHOTS, SENSITIVITY_GRID

log = logging.getLogger(__name__)

MODE_CHOICES = [mode.value for mode in DistanceMode]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _add_common_training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="Embedding file (.camf/.bin or .csv)")
    parser.add_argument("--config", default=None, help="JSON training config")
    parser.add_argument("--preset", default=None, help="Dataset preset for loss weights, e.g. dtd or eurosat")
    parser.add_argument("--heads", type=int, default=None, help="Prototypes per class M")
    parser.add_argument("--alpha", type=float, default=None, help="Intra-class loss weight")
    parser.add_argument("--beta", type=float, default=None, help="Separation loss weight")
    parser.add_argument("--gamma1", type=float, default=None, help="Identity shrinkage strength")
    parser.add_argument("--gamma2", type=float, default=None, help="Off-diagonal shrinkage strength")
    parser.add_argument("--convention", choices=[c.value for c in ShrinkageConvention], default=None)
    parser.add_argument("--epochs", type=int, default=None, help="Override the shot-keyed epoch budget")
    parser.add_argument("--no-normalize", action="store_true", help="Keep features as stored")
    parser.add_argument("--out", required=True, help="Report JSON path")


def build_parser() -> argparse.ArgumentParser:
    """
    Build the argument parser. Parse errors raise UsageError instead of exiting.

    :return: Configured parser.
    """
    parser = _Parser(prog="covariance_fewshot", description="Covariance-aware few-shot classification")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    parser.add_argument("--log-file", default=None, help="Also write logs to this file")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_gen = sub.add_parser("gen", help="Generate a synthetic anisotropic-Gaussian dataset")
    p_gen.add_argument("--classes", type=int, default=10)
    p_gen.add_argument("--dim", type=int, default=64)
    p_gen.add_argument("--per-class", type=int, default=100)
    p_gen.add_argument("--mean-scale", type=float, default=1.0)
    p_gen.add_argument("--noise-scale", type=float, default=0.1)
    p_gen.add_argument("--cond-range", type=float, nargs=2, default=(5.0, 50.0), metavar=("LOW", "HIGH"))
    p_gen.add_argument("--normalize", action="store_true", help="L2-normalize the generated features")
    p_gen.add_argument("--seed", type=int, default=1)
    p_gen.add_argument("--out", required=True, help="Output file; a .csv suffix writes CSV, otherwise CAMF")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="Train and evaluate one configuration")
    _add_common_training_flags(p_train)
    p_train.add_argument("--shots", type=int, default=None)
    p_train.add_argument("--seeds", type=int, nargs="*", default=[DEFAULT_SEEDS[0]])
    p_train.add_argument("--mode", choices=MODE_CHOICES, default=None, help="Evaluate one mode only")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="Sweep shots, seeds, modes and hyper-parameter grids")
    _add_common_training_flags(p_sweep)
    p_sweep.add_argument("--shots", type=int, nargs="*", default=sorted(EPOCHS_BY_SHOTS))
    p_sweep.add_argument("--seeds", type=int, nargs="*", default=list(DEFAULT_SEEDS))
    p_sweep.add_argument("--mode", choices=MODE_CHOICES, nargs="*", default=MODE_CHOICES)
    p_sweep.add_argument("--heads-grid", type=int, nargs="*", default=None)
    p_sweep.add_argument("--alpha-grid", type=float, nargs="*", default=None)
    p_sweep.add_argument("--beta-grid", type=float, nargs="*", default=None)
    p_sweep.add_argument("--gamma1-grid", type=float, nargs="*", default=None)
    p_sweep.add_argument("--gamma2-grid", type=float, nargs="*", default=None)
    p_sweep.add_argument(
        "--sensitivity", action="store_true", help=f"Use {list(SENSITIVITY_GRID)} for unset alpha/beta grids"
    )
    p_sweep.add_argument("--degradation-margin", type=float, default=DEFAULT_DEGRADATION_MARGIN)
    p_sweep.set_defaults(func=cmd_sweep)

    p_ablate = sub.add_parser("ablate", help="Run the six-row component ablation")
    _add_common_training_flags(p_ablate)
    p_ablate.add_argument("--shots", type=int, default=None)
    p_ablate.add_argument("--seeds", type=int, nargs="*", default=list(DEFAULT_SEEDS))
    p_ablate.set_defaults(func=cmd_ablate)

    return parser


def config_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """
    Config overrides from the flags that were given.

    :param args: Parsed arguments.
    :return: Nested override dictionary.
    """
    overrides: dict[str, Any] = {}
    if getattr(args, "preset", None) is not None:
        overrides["preset"] = args.preset
    if isinstance(getattr(args, "shots", None), int):
        overrides["shots"] = args.shots
    for flag in ("heads", "epochs"):
        if getattr(args, flag, None) is not None:
            overrides[flag] = getattr(args, flag)

    weights = {name: getattr(args, name) for name in ("alpha", "beta") if getattr(args, name, None) is not None}
    if weights:
        overrides["weights"] = weights
    shrinkage = {name: getattr(args, name) for name in ("gamma1", "gamma2") if getattr(args, name, None) is not None}
    if getattr(args, "convention", None) is not None:
        shrinkage["convention"] = args.convention
    if shrinkage:
        overrides["shrinkage"] = shrinkage
    return overrides


def _config_loader(args: argparse.Namespace) -> Any:
    def loader(overrides: Any) -> TrainConfig:
        return load_train_config(args.config, overrides)

    return overriding_factory(config_overrides(args), loader)


def _load_data(args: argparse.Namespace) -> EmbeddingSet:
    return load_embeddings(args.data, normalize=not args.no_normalize)


def _require_non_empty(name: str, values: Sequence[Any] | None) -> None:
    if values is not None and len(values) == 0:
        raise EmptyGridError(f"--{name} was given without values")


def _build_report(
    command: str, args: argparse.Namespace, base: TrainConfig, cells: Any, rows: Any, started: float
) -> ExperimentReport:
    return ExperimentReport(
        command=command,  # type: ignore[arg-type]
        data=str(args.data),
        normalize=not args.no_normalize,
        config=base.snapshot(),
        cells=list(cells),
        rows=list(rows),
        timings={"wall_seconds": time.perf_counter() - started},
    )


def cmd_gen(args: argparse.Namespace) -> int:
    """
    Write a synthetic dataset. A ``.csv`` output writes CSV, anything else CAMF.

    :param args: Parsed arguments.
    :return: Exit code.
    """
    try:
        spec = SyntheticSpec(
            class_count=args.classes,
            dimension=args.dim,
            per_class=args.per_class,
            mean_scale=args.mean_scale,
            noise_scale=args.noise_scale,
            cond_range=(args.cond_range[0], args.cond_range[1]),
            seed=args.seed,
            normalize=args.normalize,
        )
    except ValueError as e:
        raise UsageError(f"Invalid synthetic spec: {e}") from e

    dataset = gen_synthetic(spec)
    if Path(args.out).suffix.lower() == ".csv":
        save_embeddings_csv(dataset.embeddings, args.out)
    else:
        save_embeddings(dataset.embeddings, args.out)
    print(f"Wrote {dataset.embeddings.size} samples ({spec.class_count} classes, D={spec.dimension}) to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """
    Train one configuration per seed and evaluate it in every requested mode.

    Unlike ``sweep`` and ``ablate``, a failed seed fails the command with its error's exit code and no
    report is written.

    :param args: Parsed arguments.
    :return: Exit code.
    """
    started = time.perf_counter()
    _require_non_empty("seeds", args.seeds)
    factory = _config_loader(args)
    base = factory({})
    modes = (DistanceMode(args.mode),) if args.mode else ALL_MODES

    embeddings = _load_data(args)
    jobs = build_jobs(factory, [{"seed": seed} for seed in args.seeds], modes)
    cells = run_jobs(embeddings, jobs, resolve_workers(), fail_fast=True)
    rows = aggregate_cells(cells)

    write_report(_build_report("train", args, base, cells, rows, started), args.out)
    for row in rows:
        mean = "failed" if row.mean is None else f"{100 * row.mean:.2f}%"
        print(f"{row.key.mode.value:<12} accuracy={mean} seeds={row.seeds}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """
    Run a Cartesian sweep and write the aggregated report.

    :param args: Parsed arguments.
    :return: Exit code.
    """
    started = time.perf_counter()
    for name in ("shots", "seeds", "mode", "heads-grid", "alpha-grid", "beta-grid", "gamma1-grid", "gamma2-grid"):
        _require_non_empty(name, getattr(args, name.replace("-", "_")))

    alpha_grid = args.alpha_grid or (list(SENSITIVITY_GRID) if args.sensitivity else None)
    beta_grid = args.beta_grid or (list(SENSITIVITY_GRID) if args.sensitivity else None)
    grid = SweepGrid(
        shots=tuple(args.shots),
        seeds=tuple(args.seeds),
        modes=tuple(DistanceMode(m) for m in args.mode),
        heads=tuple(args.heads_grid) if args.heads_grid else (None,),
        alphas=tuple(alpha_grid) if alpha_grid else (None,),
        betas=tuple(beta_grid) if beta_grid else (None,),
        gamma1s=tuple(args.gamma1_grid) if args.gamma1_grid else (None,),
        gamma2s=tuple(args.gamma2_grid) if args.gamma2_grid else (None,),
    )
    grid.validate()

    factory = _config_loader(args)
    base = factory({"shots": grid.shots[0]})
    embeddings = _load_data(args)
    cells, rows = run_sweep(embeddings, grid, factory, resolve_workers(), args.degradation_margin)

    report = _build_report("sweep", args, base, cells, rows, started)
    write_report(report, args.out)
    failed = report.failed_cells()
    degraded = sum(row.degraded for row in rows)
    print(f"Sweep done: {len(cells)} results, {len(failed)} failed, {len(rows)} rows, {degraded} degraded")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    """
    Run the six ablation rows, print the table and write the report.

    :param args: Parsed arguments.
    :return: Exit code.
    """
    started = time.perf_counter()
    _require_non_empty("seeds", args.seeds)
    factory = _config_loader(args)
    base = factory({"seed": args.seeds[0]})
    embeddings = _load_data(args)

    cells, rows = run_ablation(embeddings, factory, args.seeds, resolve_workers())
    write_report(_build_report("ablate", args, base, cells, rows, started), args.out)
    print_ablation_table(rows, header={"data": args.data, "shots": base.shots, "seeds": list(args.seeds)})
    return EXIT_OK


def run(argv: Sequence[str] | None = None) -> int:
    """
    Parse arguments and dispatch to a command.

    Library errors are logged and mapped to their exit codes; anything else propagates.

    :param argv: Arguments without the program name; None reads ``sys.argv``.
    :return: Exit code (0 ok, 1 usage, 2 data, 3 numerical).
    """
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        if args.log_file:
            add_file_logging(args.log_file)

        log.info(f"Command start command={args.command}")
        code = int(args.func(args))
        log.info(f"Command complete command={args.command}")
        return code
    except CovarianceFewShotError as e:
        log.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception:
        log.exception("Command FAILED with an unexpected error")
        raise
