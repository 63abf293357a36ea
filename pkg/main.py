from __future__ import annotations

import argparse
import csv
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

from config import (
    ConfigError,
    JamVariant,
    RunConfig,
    SystemConfig,
    config_hash,
    get_log_level,
    get_thread_count,
    load_run_config,
)
from sim import TrialPlan, sweep
from validation import run_validation


logger = logging.getLogger("oamhop")

SCHEMA_VERSION = "1"
PARAMETER_COLUMNS = [
    "scheme", "csi", "variant", "N", "I", "U", "M", "xi", "snr_db", "jnr_db", "sigma_eps_sq", "jam_modes",
]
ANALYTIC_COLUMNS = ["aber_bound", "aber_raw", "aber_clamped", "aber_terms", "aber_method", "se", "se_signal", "se_index"]
SIMULATE_COLUMNS = ["ber", "ci95", "trials", "errors", "bits_total", "reliable", "max_jam_residual"]
COMMAND_COLUMNS = {
    "analytic": PARAMETER_COLUMNS + ANALYTIC_COLUMNS,
    "simulate": PARAMETER_COLUMNS + SIMULATE_COLUMNS,
    "sweep": PARAMETER_COLUMNS + ANALYTIC_COLUMNS + SIMULATE_COLUMNS,
}

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_CONFIG_ERROR = 2


def configure_logging():
    logging.basicConfig(
        level=get_log_level(),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oamhop",
        description="IM-MH / IM-DSMH mode hopping: closed-form ABER/SE and Monte Carlo BER",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, summary in (
        ("analytic", "evaluate union-bound ABER and SE on the configured grid"),
        ("simulate", "Monte Carlo BER on the configured grid"),
        ("sweep", "simulation and closed forms side by side"),
    ):
        command = commands.add_parser(name, help=summary)
        command.add_argument("--config", type=Path, default=None, help="YAML run config (defaults when omitted)")
        command.add_argument("--seed", type=int, default=None, help="override the config seed")
        command.add_argument("--out", type=Path, default=None, help="CSV destination (stdout when omitted)")
        command.add_argument("--variant", choices=[item.value for item in JamVariant], default=None)
        command.add_argument("--threads", type=int, default=None, help="worker processes (env OAMHOP_THREADS)")
    validate = commands.add_parser("validate", help="run the built-in oracle suite")
    validate.add_argument("--out", type=Path, default=None)
    return parser


def resolve_run(args: argparse.Namespace) -> RunConfig:
    run = load_run_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.variant is not None:
        overrides["variant"] = JamVariant(args.variant)
    return run.model_copy(update=overrides) if overrides else run


def grid_points(run: RunConfig) -> list[SystemConfig]:
    points = []
    for snr_db in run.snr_db:
        if run.sweep is None:
            points.append(run.system_at(snr_db))
            continue
        for value in run.sweep.values:
            try:
                points.append(run.system_at(snr_db, **{run.sweep.name: value}))
            except ValueError as error:
                raise ConfigError(f"sweep {run.sweep.name}={value}: {error}") from error
    return points


def build_plans(run: RunConfig, threads: int) -> list[TrialPlan]:
    return [
        TrialPlan.from_settings(point, run.scheme, run.csi, run.simulation, run.seed, threads)
        for point in grid_points(run)
    ]


def _metadata(run: RunConfig, command: str, plans: list[TrialPlan]) -> list[str]:
    columns = COMMAND_COLUMNS[command]
    lines = [
        f"# schema oamhop-{command}/v{SCHEMA_VERSION}: {','.join(columns)}",
        f"# config_hash {config_hash(run)}",
        f"# seed {run.seed}",
    ]
    seen = set()
    for plan in plans:
        cfg = plan.cfg
        line = f"# derived snr_db={cfg.snr_db} xi={cfg.xi} noise_var={cfg.noise_var!r} jam_var={cfg.jam_var!r}"
        if line not in seen:
            seen.add(line)
            lines.append(line)
    return lines


@contextmanager
def _output(path: Path | None):
    if path is None:
        yield sys.stdout
        return
    with open(path, "w", newline="") as handle:
        yield handle


def write_csv(handle, run: RunConfig, command: str, plans: list[TrialPlan], rows: list[dict]):
    for line in _metadata(run, command, plans):
        handle.write(line + "\n")
    writer = csv.DictWriter(handle, fieldnames=COMMAND_COLUMNS[command], extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def run_grid(args: argparse.Namespace, command: str) -> int:
    run = resolve_run(args)
    threads = args.threads if args.threads is not None else get_thread_count()
    plans = build_plans(run, max(1, threads))
    logger.info("%s: %d grid points, config %s", command, len(plans), config_hash(run))
    results = sweep(plans, run.variant, simulate=command != "analytic")
    rows = [result.to_dict() for result in results]
    with _output(args.out) as handle:
        write_csv(handle, run, command, plans, rows)
    return EXIT_OK


def cmd_analytic(args: argparse.Namespace) -> int:
    return run_grid(args, "analytic")


def cmd_simulate(args: argparse.Namespace) -> int:
    return run_grid(args, "simulate")


def cmd_sweep(args: argparse.Namespace) -> int:
    return run_grid(args, "sweep")


def cmd_validate(args: argparse.Namespace) -> int:
    results = run_validation()
    with _output(args.out) as handle:
        for result in results:
            status = "PASS" if result.passed else "FAIL"
            handle.write(f"{status}  {result.name}: {result.detail} [tolerance {result.tolerance}]\n")
    return EXIT_OK if all(result.passed for result in results) else EXIT_VALIDATION_FAILED


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as error:
        print(f"config error: {error}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except ValueError as error:
        print(f"invalid parameters: {error}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
