"""
Command-line harness.

Subcommands: experiment | sweep | lowerbound | validate | bounds. Every
command resolves a RunConfig (flag > config file > preset > Config
default), writes a CSV with a header row and prints a summary table.
Exit codes: 0 success, 1 validation failure or runtime error, 2 config error.
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from tabulate import tabulate

from config import Config

from .analysis import LINEAR, NONLINEAR, bound_calculator
from .coupled import gap_sweep, summarize_rows
from .errors import ConfigError, OracleNotApplicable, ParticlePlanningError, SpecError
from .invariant_suite import run_invariant_suite
from .lowerbound import run_death_experiment
from .model import validate_spec
from .oracle import oracle_applicable
from .presets import DEFAULT_PRESET, preset_names, preset_text
from .run_config import LowerBoundGrid, RunConfig, load_preset, load_run_config, parse_int_list
from .streams import StreamKey

logger = logging.getLogger(__name__)

SWEEP_FIELDS = ["run_id", "N", "seed", "T", "reward_gap", "reward_approx", "reward_ideal", "died_at", "wall_time_ms"]
EXPERIMENT_FIELDS = ["run_id", "N", "seed", "T", "regret", "regret_ideal", "reward_gap", "died_at", "wall_time_ms"]
SUMMARY_FIELDS = ["N", "T", "runs", "deaths", "mean", "std", "median", "sem"]
LOWERBOUND_FIELDS = ["T", "N", "exact", "empirical", "bound_1_over_k", "pass"]
BOUNDS_FIELDS = ["variant", "T", "sigma_a", "sigma_ab", "sigma_ab_bar", "delta_nonlinear", "delta_linear",
                 "delta_T", "n_expression", "log_factor", "corollary_n", "corollary_applicable"]

CSV_EPILOG = f"""\
CSV columns (missing values are empty fields):
  experiment   {', '.join(EXPERIMENT_FIELDS)}
               plus <out>_summary.csv: {', '.join(SUMMARY_FIELDS)}
  sweep        {', '.join(SWEEP_FIELDS)}
  lowerbound   {', '.join(LOWERBOUND_FIELDS)}
  bounds       {', '.join(BOUNDS_FIELDS)}

Presets: {', '.join(preset_names())}. Config keys: docs/CONFIG_SCHEMA.md.
"""


def setup_logging(level: str, log_dir: str) -> None:
    """Console plus file logging, configured once per process."""
    os.makedirs(log_dir, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler(os.path.join(log_dir, 'particle_planning.log')),
        ],
        force=True,
    )


def write_csv(path: Path, fieldnames: Sequence[str], rows: Iterable[Dict[str, object]]) -> Path:
    """Header plus rows; None becomes an empty field."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: "" if value is None else value for key, value in row.items()})
    return path


# --------------------------------------------------------------------------
# Config resolution
# --------------------------------------------------------------------------

def resolve_config(args: argparse.Namespace) -> RunConfig:
    """RunConfig from --config / --preset with command-line overrides applied."""
    defaults = Config.defaults()
    if args.config:
        config = load_run_config(args.config, preset=args.preset, defaults=defaults)
    else:
        config = load_preset(args.preset or DEFAULT_PRESET, defaults=defaults)

    overrides = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError(f"--seed must fit in 64 unsigned bits, got {args.seed}")
        overrides["master_seed"] = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be at least 1, got {args.jobs}")
        overrides["jobs"] = args.jobs
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError(f"--seeds must be at least 1, got {args.seeds}")
        overrides["seeds"] = args.seeds
    if args.out:
        overrides["out"] = args.out

    if args.command == "lowerbound":
        grid = config.lowerbound
        config = replace(config, lowerbound=LowerBoundGrid(
            t_list=parse_int_list(args.T_list, "--T-list") if args.T_list else grid.t_list,
            n_list=parse_int_list(args.N_list, "--N-list") if args.N_list else grid.n_list,
            reps=args.reps if args.reps is not None else grid.reps,
            k=args.k if args.k is not None else grid.k,
        ))
    else:
        if args.N_list:
            overrides["n_list"] = parse_int_list(args.N_list, "--N-list")
        if args.T_list:
            overrides["t_list"] = parse_int_list(args.T_list, "--T-list")
    return replace(config, **overrides)


def output_path(config: RunConfig, command: str) -> Path:
    if config.out:
        return Path(config.out)
    name = config.preset or Path(config.source).stem
    return Path(Config.OUTPUT_DIR) / f"{command}_{name}.csv"


def _checked_spec(config: RunConfig, horizon: int):
    spec = config.spec_for(horizon)
    problems = validate_spec(spec)
    if problems:
        raise SpecError("; ".join(problems))
    reason = oracle_applicable(config.oracle_kind, spec)
    if reason is not None:
        raise OracleNotApplicable(reason)
    return spec


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def _sweep_all_horizons(config: RunConfig, progress: bool):
    rows = []
    master = StreamKey(config.master_seed)
    for ti, horizon in enumerate(config.t_list):
        spec = _checked_spec(config, horizon)
        rows.extend(gap_sweep(
            spec, config.policy, config.reward_for(horizon), config.n_list, config.seeds, config.oracle_kind,
            master.child(ti), jobs=config.jobs, progress=progress, history_limit=Config.HISTORY_LIMIT,
            run_id_offset=len(rows),
        ))
    return rows


def _print_summary(summary: List[Dict[str, object]], title: str) -> None:
    table = [[s["N"], s["T"], s["runs"], s["deaths"], f"{s['mean']:.6g}", f"{s['sem']:.3g}", f"{s['std']:.6g}",
              f"{s['median']:.6g}"] for s in summary]
    print(f"\n📊 {title}")
    print(tabulate(table, headers=["N", "T", "Runs", "Deaths", "Mean", "+-SE", "Std", "Median"], tablefmt="grid"))


def cmd_experiment(config: RunConfig, args: argparse.Namespace, progress: bool) -> int:
    """Regret of the particle planner over the (N, T, seed) grid, with a per-(N, T) summary."""
    logger.info(f"🚀 experiment: N={config.n_list} T={config.t_list} seeds={config.seeds}")
    rows = _sweep_all_horizons(config, progress)
    path = write_csv(output_path(config, "experiment"), EXPERIMENT_FIELDS, ({
        "run_id": r.run_id, "N": r.n_particles, "seed": r.seed, "T": r.horizon,
        "regret": r.reward_approx, "regret_ideal": r.reward_ideal, "reward_gap": r.reward_gap,
        "died_at": r.died_at, "wall_time_ms": f"{r.wall_time_ms:.3f}",
    } for r in rows))
    summary = summarize_rows(rows, value="reward_approx")
    summary_path = write_csv(path.with_name(f"{path.stem}_summary.csv"), SUMMARY_FIELDS, summary)
    _print_summary(summary, "Regret per (N, T)")
    logger.info(f"✅ wrote {path} and {summary_path}")

    if args.plot:
        plot_regret(summary, Path(args.plot))
        logger.info(f"✅ plot written to {args.plot}")
    if args.emit_gnuplot_script:
        write_gnuplot_script(summary_path, Path(args.emit_gnuplot_script), config.t_list)
        logger.info(f"✅ gnuplot script written to {args.emit_gnuplot_script}")
    return 0


def cmd_sweep(config: RunConfig, args: argparse.Namespace, progress: bool) -> int:
    """Coupled-run reward gaps over the (N, T, seed) grid."""
    logger.info(f"🚀 sweep: N={config.n_list} T={config.t_list} seeds={config.seeds}")
    rows = _sweep_all_horizons(config, progress)
    path = write_csv(output_path(config, "sweep"), SWEEP_FIELDS, ({
        "run_id": r.run_id, "N": r.n_particles, "seed": r.seed, "T": r.horizon,
        "reward_gap": r.reward_gap, "reward_approx": r.reward_approx, "reward_ideal": r.reward_ideal,
        "died_at": r.died_at, "wall_time_ms": f"{r.wall_time_ms:.3f}",
    } for r in rows))
    _print_summary(summarize_rows(rows, value="reward_gap"), "Reward gap per (N, T)")
    failed = [r for r in rows if r.error]
    if failed:
        logger.warning(f"⚠️ {len(failed)} sweep cells failed; see the log for details")
    logger.info(f"✅ wrote {path}")
    return 0


def cmd_lowerbound(config: RunConfig, args: argparse.Namespace, progress: bool) -> int:
    """Particle survival on the hard instance over the (T, N) grid."""
    grid = config.lowerbound
    logger.info(f"🚀 lowerbound: T={grid.t_list} N={grid.n_list} reps={grid.reps} k={grid.k}")
    master = StreamKey(config.master_seed)
    reports = []
    for ti, horizon in enumerate(grid.t_list):
        for ni, n_particles in enumerate(grid.n_list):
            reports.append(run_death_experiment(horizon, n_particles, grid.reps, master.child(ti, ni), k=grid.k,
                                                 jobs=config.jobs, progress=progress))
    path = write_csv(output_path(config, "lowerbound"), LOWERBOUND_FIELDS, ({
        "T": r.T, "N": r.N, "exact": r.exact, "empirical": r.empirical,
        "bound_1_over_k": r.bound_1_over_k, "pass": r.passed,
    } for r in reports))
    table = [[r.T, r.N, f"{r.exact:.5f}", f"{r.empirical:.5f}", f"{r.sigma:.5f}",
              "✅" if r.bound_applies else "-", "✅" if r.passed else "❌"] for r in reports]
    print(tabulate(table, headers=["T", "N", "Exact", "Empirical", "Sigma", "N <= 1/(2kp)", "Pass"], tablefmt="grid"))
    logger.info(f"✅ wrote {path}")
    return 0 if all(r.passed for r in reports) else 1


def cmd_validate(config: RunConfig, args: argparse.Namespace, progress: bool) -> int:
    """Run the invariant suite; nonzero exit on any failed property."""
    specs = [config.spec_for(horizon) for horizon in config.t_list]
    results = run_invariant_suite(specs, StreamKey(config.master_seed), cases=args.reps, progress=progress)
    table = [[r.name, "✅" if r.passed else "❌", r.cases, r.detail] for r in results]
    print(tabulate(table, headers=["Property", "Pass", "Cases", "Detail"], tablefmt="grid"))
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"❌ {len(failed)} properties failed: {', '.join(failed)}")
        return 1
    logger.info(f"✅ all {len(results)} properties passed")
    return 0


def cmd_bounds(config: RunConfig, args: argparse.Namespace, progress: bool) -> int:
    """Particle-count expressions for every configured horizon."""
    variant = args.variant or config.variant
    reports = [bound_calculator(config.bound_params(horizon), variant) for horizon in config.t_list]
    path = write_csv(output_path(config, "bounds"), BOUNDS_FIELDS, (r.as_row() for r in reports))
    table = [[r.T, f"{r.sigma_a:.6g}", f"{r.sigma_ab:.6g}", f"{r.delta_T:.6g}", f"{r.n_expression:.6g}",
              f"{r.log_factor:.4g}", "-" if r.corollary_n is None else f"{r.corollary_n:.6g}"] for r in reports]
    print(f"\n📊 Particle complexity ({variant})")
    print(tabulate(table, headers=["T", "Sigma_a", "Sigma_ab", "Delta_T", "N expression", "log(dT/delta)",
                                   "Corollary N"], tablefmt="grid"))
    logger.info(f"✅ wrote {path}")
    return 0


COMMANDS = {
    "experiment": cmd_experiment,
    "sweep": cmd_sweep,
    "lowerbound": cmd_lowerbound,
    "validate": cmd_validate,
    "bounds": cmd_bounds,
}


# --------------------------------------------------------------------------
# Plot output
# --------------------------------------------------------------------------

def plot_regret(summary: List[Dict[str, object]], path: Path) -> None:
    """Mean regret with +-1 standard-error bars against N, one line per T."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for horizon in sorted({s["T"] for s in summary}):
        cells = [s for s in summary if s["T"] == horizon]
        ax.errorbar([s["N"] for s in cells], [s["mean"] for s in cells], yerr=[s["sem"] for s in cells],
                    marker="o", capsize=3, label=f"T = {horizon}")
    ax.set_xscale("log")
    ax.set_xlabel("number of particles N")
    ax.set_ylabel("regret")
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)


def write_gnuplot_script(summary_csv: Path, path: Path, horizons: Sequence[int]) -> None:
    lines = [
        "set datafile separator ','",
        "set logscale x",
        "set xlabel 'number of particles N'",
        "set ylabel 'regret'",
        "set key top right",
    ]
    plots = [f"'{summary_csv}' using 1:($2=={T} ? $5 : 1/0):8 skip 1 with yerrorlines title 'T = {T}'"
             for T in horizons]
    lines.append("plot " + ", \\\n     ".join(plots))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="run config file (INI style)")
    common.add_argument("--preset", type=str, default=None,
                        help=f"base preset ({', '.join(preset_names())}); default {DEFAULT_PRESET}")
    common.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    common.add_argument("--jobs", type=int, default=None, help="worker threads")
    common.add_argument("--out", type=str, default=None, help="output CSV path")
    common.add_argument("--seeds", type=int, default=None, help="replications per grid cell")
    common.add_argument("--N-list", dest="N_list", type=str, default=None, help="particle counts, e.g. '10,100,1000'")
    common.add_argument("--T-list", dest="T_list", type=str, default=None, help="horizons, e.g. '10,20,40'")
    common.add_argument("--quiet", action="store_true", help="no progress bars")
    common.add_argument("--log-level", type=str, default=None, help="DEBUG | INFO | WARNING | ERROR")

    parser = argparse.ArgumentParser(
        prog="run_experiments.py",
        description="Particle filtering for sequential planning: experiments, sweeps and bound checks",
        epilog=CSV_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--dump-preset", metavar="NAME", default=None, help="print a preset as a config file and exit")
    sub = parser.add_subparsers(dest="command")

    experiment = sub.add_parser("experiment", parents=[common], help="regret vs number of particles",
                                epilog=CSV_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    experiment.add_argument("--plot", type=str, default=None, help="write the regret curve (PNG/PDF)")
    experiment.add_argument("--emit-gnuplot-script", type=str, default=None, help="write a gnuplot script for the summary CSV")

    sub.add_parser("sweep", parents=[common], help="coupled reward gaps over N and seeds",
                   epilog=CSV_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)

    lowerbound = sub.add_parser("lowerbound", parents=[common], help="particle death on the hard instance",
                                epilog=CSV_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    lowerbound.add_argument("--reps", type=int, default=None, help="replications per (T, N)")
    lowerbound.add_argument("--k", type=float, default=None, help="bound parameter k (checks survival <= 1/k)")

    validate = sub.add_parser("validate", parents=[common], help="run the invariant suite")
    validate.add_argument("--reps", type=int, default=None, help="randomized cases per property")

    bounds = sub.add_parser("bounds", parents=[common], help="particle-count expressions",
                            epilog=CSV_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    bounds.add_argument("--variant", choices=[NONLINEAR, LINEAR], default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.dump_preset:
        try:
            sys.stdout.write(preset_text(args.dump_preset))
        except ConfigError as exc:
            print(f"❌ {exc}", file=sys.stderr)
            return 2
        return 0
    if args.command is None:
        parser.print_help()
        return 2

    setup_logging(args.log_level or Config.LOG_LEVEL, Config.LOG_DIR)
    problems = Config.validate()
    if problems:
        for problem in problems:
            logger.error(f"❌ {problem}")
        return 2

    progress = not args.quiet and sys.stderr.isatty()
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config, args, progress)
    except (ConfigError, SpecError, OracleNotApplicable) as exc:
        logger.error(f"❌ {exc}")
        return 2
    except ParticlePlanningError as exc:
        logger.error(f"❌ {type(exc).__name__}: {exc}")
        return 1
    except Exception:
        logger.exception("❌ unexpected error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
