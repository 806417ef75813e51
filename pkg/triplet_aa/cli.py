"""Command-line entry point: synth, run, windows and pvalues subcommands."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable

import numpy as np
from pydantic import BaseModel, Field, model_validator

from triplet_aa.aggregator import cumulative_losses, cumulative_regret, run_online
from triplet_aa.cohort import Cohort, load_cohort, order_chronological, write_cohort
from triplet_aa.errors import (
    ConfigurationError,
    TripletAAError,
    UsageError,
    validated,
)
from triplet_aa.experts import (
    build_pool,
    floor_intensities,
    parse_expert,
    power_law_prior,
    prediction_tensor,
)
from triplet_aa.logging_config import get_logger, set_level
from triplet_aa import reports
from triplet_aa.stats import ErrMode, GridSpec, SweepConfig, rank_experts, window_sweep
from triplet_aa.synth import DEFAULT_INFORMATIVE_PEAKS, SynthConfig, generate

logger = get_logger(__name__)

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class RunConfig(BaseModel):
    """Everything a subcommand needs, resolved from the flags."""

    input: Path | None = None
    synth: SynthConfig | None = None
    eta: float = Field(1.0, gt=0, le=1)
    # Power-law prior base; 1 is the uniform prior.
    prior_d: float = Field(1.0, ge=1)
    categorical: bool = False
    experts: list[str] = Field(default_factory=list)
    t_values: list[float] = Field(default_factory=lambda: [float(t) for t in range(17)])
    theta: float = Field(6.0, gt=0)
    grid: GridSpec = Field(default_factory=GridSpec)
    n_trials: int = Field(10_000, ge=0)
    seed: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)
    closed_right: bool = False
    mode: ErrMode = ErrMode.WINDOW
    out_dir: Path = Path(".")
    out: Path | None = None

    @model_validator(mode="after")
    def _one_source(self) -> RunConfig:
        if (self.input is None) == (self.synth is None):
            raise ValueError("exactly one of an input file or a synthetic cohort is required")
        return self


def _parse_values(text: str) -> list[float]:
    """``start:stop:step`` or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError(text)
            count = int(round((stop - start) / step)) + 1
            return [round(start + i * step, 10) for i in range(count)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step or a comma list, got '{text}'")


def _parse_prior(text: str) -> float:
    """Power-law base d; the uniform prior is d = 1."""
    if text == "uniform":
        return 1.0
    if text.startswith("power:"):
        try:
            return float(text.split(":", 1)[1])
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"expected 'uniform' or 'power:d', got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_argument_group("cohort source")
    source.add_argument("--input", type=Path, help="Cohort CSV file")
    source.add_argument("--synth", action="store_true", help="Use a synthetic cohort")
    source.add_argument("--seed", type=int, default=0, help="Seed for synthetic data and permutations")
    source.add_argument("--triplets", type=int, default=179, help="Synthetic triplet count")
    source.add_argument("--peaks", type=int, default=67, help="Synthetic peak count")
    source.add_argument("--signal", type=float, default=2.0, help="Synthetic signal strength")
    source.add_argument("--horizon", type=float, default=15.0, help="Synthetic signal horizon (months)")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="Output directory")
    common.add_argument("--threads", type=int, default=1, help="Worker threads for Monte-Carlo trials")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")

    learner = argparse.ArgumentParser(add_help=False)
    learner.add_argument("--eta", type=float, help="AA learning rate")
    learner.add_argument("--prior", type=_parse_prior, help="uniform or power:d")

    windows = argparse.ArgumentParser(add_help=False)
    windows.add_argument("--t-start", type=int, default=0)
    windows.add_argument("--t-end", type=int, default=16)
    windows.add_argument("--theta", type=float, default=6.0)
    windows.add_argument("--grid-d", type=_parse_values, help="d values, e.g. 1.1:2.0:0.1")
    windows.add_argument("--grid-eta", type=_parse_values, help="eta values, e.g. 0.1:1.0:0.05")
    windows.add_argument("--trials", type=int, default=10_000, help="Monte-Carlo trials per p-value")
    windows.add_argument("--per-triplet", action="store_true", help="Fresh AA on every triplet")
    windows.add_argument("--closed-window", action="store_true", help="Use [t, t+theta] windows")

    parser = argparse.ArgumentParser(
        prog="triplet-aa",
        description="Aggregating Algorithm for the Brier game on case/control triplets",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    synth = sub.add_parser("synth", parents=[common], help="Write a synthetic cohort CSV")
    synth.add_argument("--out", type=Path, help="Output file (default <out-dir>/cohort.csv)")
    run = sub.add_parser("run", parents=[common, learner], help="Cumulative losses over all triplets")
    run.add_argument("--categorical", action="store_true", help="Sharpen AA predictions")
    run.add_argument("--expert", action="append", default=[], help="Restrict the pool (v,w,p)")
    sub.add_parser("windows", parents=[common, learner, windows], help="Windowed error table")
    sub.add_parser("pvalues", parents=[common, learner, windows], help="Windowed p-values")
    return parser


def _run_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> RunConfig:
    if args.command == "synth":
        if args.input is not None:
            parser.error("synth generates a cohort; --input is not allowed")
        args.synth = True
    elif (args.input is None) == (not args.synth):
        parser.error("give exactly one of --input PATH or --synth")

    fields: dict = {
        "input": args.input,
        "seed": args.seed,
        "threads": args.threads,
        "out_dir": args.out_dir,
    }
    if args.synth:
        fields["synth"] = validated(
            SynthConfig,
            n_triplets=args.triplets,
            n_peaks=args.peaks,
            signal_strength=args.signal,
            signal_horizon=args.horizon,
            informative_peaks=[p for p in DEFAULT_INFORMATIVE_PEAKS if p <= args.peaks] or [1],
            seed=args.seed,
        )
    if args.command == "synth":
        fields["out"] = args.out
    elif args.command == "run":
        fields.update(
            eta=1.0 if args.eta is None else args.eta,
            prior_d=1.0 if args.prior is None else args.prior,
            categorical=args.categorical,
            experts=args.expert,
        )
    else:
        grid = GridSpec()
        fields.update(
            eta=0.65 if args.eta is None else args.eta,
            prior_d=1.2 if args.prior is None else args.prior,
            t_values=[float(t) for t in range(args.t_start, args.t_end + 1)],
            theta=args.theta,
            grid=validated(
                GridSpec,
                d_values=args.grid_d or grid.d_values,
                eta_values=args.grid_eta or grid.eta_values,
            ),
            n_trials=args.trials,
            closed_right=args.closed_window,
            mode=ErrMode.PER_TRIPLET if args.per_triplet else ErrMode.WINDOW,
        )
    return validated(RunConfig, **fields)


def _load_cohort(config: RunConfig) -> Cohort:
    if config.input is not None:
        return floor_intensities(load_cohort(config.input))
    return generate(config.synth)


def cmd_synth(config: RunConfig) -> None:
    path = config.out or config.out_dir / "cohort.csv"
    write_cohort(generate(config.synth), path)
    print(f"Wrote {config.synth.n_triplets} triplets to {path}")


def cmd_run(config: RunConfig) -> None:
    cohort = _load_cohort(config)
    triplets = order_chronological(cohort)
    pool = [parse_expert(x) for x in config.experts] or build_pool(cohort.num_peaks)
    if len(set(pool)) != len(pool):
        raise UsageError("--expert lists the same combination more than once")
    prior = power_law_prior(pool, config.prior_d)
    predictions = prediction_tensor(pool, triplets)
    records = run_online(
        pool,
        prior,
        config.eta,
        zip(predictions, (t.outcome for t in triplets)),
        categorical=config.categorical,
    )
    ids = [t.triplet_id for t in triplets]
    reports.write_cumulative(cumulative_regret(records), pool, ids, config.out_dir / "cumulative.csv")
    learner, experts = cumulative_losses(records)
    ranking = rank_experts(pool, experts[-1])
    reports.write_ranking(ranking, config.out_dir / "ranking.csv")

    print(f"AA loss after {len(records)} triplets: {learner[-1]:.4f}")
    print(f"Best expert: {ranking[0][0].label} ({ranking[0][1]:.4f})")
    if config.prior_d == 1.0 and not config.categorical:
        print(f"Guaranteed margin ln K = {np.log(len(pool)):.4f}")
    print(reports.format_ranking(ranking))


def _sweep(config: RunConfig):
    cohort = _load_cohort(config)
    sweep = SweepConfig(
        d=config.prior_d,
        eta=config.eta,
        grid=config.grid,
        n_trials=config.n_trials,
        seed=config.seed,
        threads=config.threads,
        closed_right=config.closed_right,
        mode=config.mode,
    )
    return window_sweep(cohort, config.t_values, config.theta, sweep)


def cmd_windows(config: RunConfig) -> None:
    rows = _sweep(config)
    reports.write_table(rows, config.out_dir / "table.csv")
    reports.write_error_fractions(rows, config.out_dir / "error_fractions.csv")
    print(reports.format_table(rows))


def cmd_pvalues(config: RunConfig) -> None:
    if config.n_trials < 1:
        raise UsageError("pvalues needs --trials >= 1")
    rows = _sweep(config)
    reports.write_pvalues(rows, config.out_dir / "pvalues.csv")
    print(reports.format_table(rows))


COMMANDS: dict[str, Callable[[RunConfig], None]] = {
    "synth": cmd_synth,
    "run": cmd_run,
    "windows": cmd_windows,
    "pvalues": cmd_pvalues,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        set_level(logging.DEBUG)
    elif args.quiet:
        set_level(logging.ERROR)
    try:
        config = _run_config(parser, args)
        COMMANDS[args.command](config)
    except (ConfigurationError, UsageError) as e:
        logger.error(f"Error: {e}")
        return EXIT_USAGE
    except TripletAAError as e:
        logger.error(f"Error running {args.command}: {e}")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
