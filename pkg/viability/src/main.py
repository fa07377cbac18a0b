#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Command-line entry point.

  viability  compute S_V and Q_V on the configured grid
  critical   compute Q_crit and the OPT(Q_V) graph for the nominal policy
  learn      run greedy on-policy constraint learning and store the run
  evaluate   recompute metrics and the admissibility verdict of a stored run
  sweep      run `learn` over several seeds concurrently
"""

import argparse
import concurrent.futures
import os
import sys

from tqdm import tqdm

try:
    from .config import apply_overrides, build_experiment, build_grid, build_model, build_policy, config_to_dict, load_config
    from .constrained_policy import critical_set, is_admissible, opt_graph
    from .errors import GridMismatchError, UsageError, ViabilityError
    from .experiment import compute_metrics, run_experiment
    from .logger import NullLogger, PrintLogger, configure_logger, log_section
    from .run_io import load_run, print_run_summary, save_run, write_run_report, write_sweep_report
    from .set_io import new_directory, save_set, write_json, write_set_csv
    from .viability_utils import compute_viability, load_viability_result, save_viability_result, viability_metadata
except ImportError:
    from config import apply_overrides, build_experiment, build_grid, build_model, build_policy, config_to_dict, load_config
    from constrained_policy import critical_set, is_admissible, opt_graph
    from errors import GridMismatchError, UsageError, ViabilityError
    from experiment import compute_metrics, run_experiment
    from logger import NullLogger, PrintLogger, configure_logger, log_section
    from run_io import load_run, print_run_summary, save_run, write_run_report, write_sweep_report
    from set_io import new_directory, save_set, write_json, write_set_csv
    from viability_utils import compute_viability, load_viability_result, save_viability_result, viability_metadata


def make_logger(mode, log_file=None):
    if mode == "false":
        return NullLogger()
    if mode == "print":
        return PrintLogger()
    return configure_logger(log_file)


def oracle_for(config, model, grid, logger, oracle_path=None, show_progress=False):
    """Stored oracle when a q_viable.json is given, otherwise a fresh computation."""
    if oracle_path:
        logger.info(f"Loading oracle from {oracle_path}")
        result = load_viability_result(oracle_path)
        if result.grid != grid:
            raise GridMismatchError(f"oracle {oracle_path} was computed on a different grid")
        return result
    return compute_viability(
        model,
        grid,
        conservative=config.conservative_membership,
        num_threads=config.num_threads,
        logger=logger,
        show_progress=show_progress,
    )


def cmd_viability(config, logger, show_progress=True):
    with log_section("VIABILITY", logger):
        model = build_model(config)
        grid = build_grid(config, model)
        result = oracle_for(config, model, grid, logger, show_progress=show_progress)
        new_directory(config.output_dir)
        paths = save_viability_result(result, config.output_dir, config.conservative_membership)

    print("\n" + "=" * 60)
    print("VIABILITY SUMMARY")
    print("=" * 60)
    print(f"Model: {model.name}")
    print(f"Grid: {grid.n_states} states x {grid.n_actions} actions")
    print(f"Sweeps to fixed point: {result.iterations}")
    print(f"Kernel states: {result.kernel.count()}")
    print(f"Viable pairs: {result.viable.count()}")
    print("=" * 60)
    for path in paths.values():
        print(f"Saved: {path}")
    return result


def cmd_critical(config, logger, oracle_path=None, show_progress=True):
    with log_section("CRITICAL SET", logger):
        model = build_model(config)
        grid = build_grid(config, model)
        pi = build_policy(config, model)
        result = oracle_for(config, model, grid, logger, oracle_path, show_progress)
        critical = critical_set(result, pi)
        metadata = {"policy": pi.to_dict(), **viability_metadata(result, config.conservative_membership)}
        new_directory(config.output_dir)
        save_set(os.path.join(config.output_dir, "q_crit.json"), critical, metadata)
        write_set_csv(os.path.join(config.output_dir, "q_crit.csv"), critical)
        if pi.deterministic:
            graph = opt_graph(result, pi)
            save_set(os.path.join(config.output_dir, "opt_graph.json"), graph, metadata)
            write_set_csv(os.path.join(config.output_dir, "opt_graph.csv"), graph)
        logger.info(f"Critical set: {critical.count()} pairs")

    print("\n" + "=" * 60)
    print("CRITICAL SET SUMMARY")
    print("=" * 60)
    print(f"Policy: {pi.kind}")
    print(f"Viable pairs: {result.viable.count()}")
    print(f"Critical pairs: {critical.count()}")
    print("=" * 60)
    return critical


def _learn_one(config, logger, oracle=None, show_progress=False):
    experiment = build_experiment(config)
    record = run_experiment(experiment, logger=logger, show_progress=show_progress)
    metrics = None
    if oracle is not None:
        metrics = compute_metrics(record, oracle, experiment.policy)
    new_directory(config.output_dir)
    save_run(record, config.output_dir, metrics, logger)
    return record, metrics


def cmd_learn(config, logger, oracle_path=None, skip_metrics=False, show_progress=True):
    with log_section("LEARN", logger):
        oracle = None
        if not skip_metrics:
            model = build_model(config)
            oracle = oracle_for(config, model, build_grid(config, model), logger, oracle_path, show_progress)
        record, metrics = _learn_one(config, logger, oracle, show_progress)
    if metrics is not None:
        print_run_summary(metrics, "LEARN SUMMARY")
    else:
        print(f"Collected {record.total_samples} samples in {len(record.episodes)} episodes")
    print(f"Run saved: {config.output_dir}")
    return record, metrics


def cmd_evaluate(run_dir, config, logger, oracle_path=None, show_progress=True):
    """Metrics and admissibility of a stored run; greedy sufficiency is asserted."""
    with log_section("EVALUATE", logger):
        record, _ = load_run(run_dir)
        model = build_model(config)
        grid = build_grid(config, model)
        if record.khat_final.grid != grid:
            raise GridMismatchError(f"run {run_dir} and the configured grid differ")
        pi = build_policy(config, model)
        oracle = oracle_for(config, model, grid, logger, oracle_path, show_progress)
        metrics = compute_metrics(record, oracle, pi)
        verdicts = {}
        if pi.deterministic:
            verdicts = {
                mode: is_admissible(record.khat_final, oracle, pi, mode=mode).to_dict() for mode in ("theorem", "direct")
            }
        write_json(os.path.join(run_dir, "evaluation.json"), {"metrics": metrics, "admissibility": verdicts})
        write_run_report(os.path.join(run_dir, "evaluation_report.txt"), record, metrics)
    print_run_summary(metrics, "EVALUATION SUMMARY")
    return metrics


def cmd_sweep(config, seeds, logger, oracle_path=None, show_progress=True):
    """One run directory per seed under output_dir, plus sweep_report.txt."""

    def run_seed(seed):
        seeded = apply_overrides(config, seed=seed, output_dir=os.path.join(config.output_dir, f"seed_{seed}"))
        _, metrics = _learn_one(seeded, logger, oracle)
        return {"seed": seed, "status": "ok", **metrics}

    with log_section("SWEEP", logger):
        model = build_model(config)
        oracle = oracle_for(config, model, build_grid(config, model), logger, oracle_path, show_progress)
        rows = []
        with tqdm(total=len(seeds), desc="Seeds", unit="run", disable=not show_progress) as pbar:
            with concurrent.futures.ThreadPoolExecutor(max_workers=config.num_threads) as executor:
                future_to_seed = {executor.submit(run_seed, seed): seed for seed in seeds}
                for future in concurrent.futures.as_completed(future_to_seed):
                    seed = future_to_seed[future]
                    try:
                        rows.append(future.result())
                    except ViabilityError as e:
                        logger.error(f"Seed {seed}: {e.one_line()}")
                        rows.append({"seed": seed, "status": e.one_line()})
                    pbar.update(1)

        rows.sort(key=lambda row: row["seed"])
        new_directory(config.output_dir)
        report_path = os.path.join(config.output_dir, "sweep_report.txt")
        write_sweep_report(report_path, rows)
    print(f"\nSweep report saved: {report_path}")
    return rows


class CommandParser(argparse.ArgumentParser):
    """Usage errors end in one `error 2 UsageError: ...` line on stderr."""

    def error(self, message):
        print(UsageError(f"{self.prog}: {message}").one_line(), file=sys.stderr)
        sys.exit(UsageError.exit_code)


def build_parser():
    parser = CommandParser(description="Viability kernels, critical sets and constraint learning")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--config", type=str, default=None, help="Path to the JSON config")
        sub.add_argument("--seed", type=int, default=None, help="Override experiment.seed")
        sub.add_argument("--out", type=str, default=None, help="Override output_dir")
        sub.add_argument(
            "--conservative-membership",
            dest="conservative_membership",
            action="store_true",
            help="A successor counts as inside only if every enclosing grid point is",
        )
        sub.add_argument("--num_threads", type=int, default=None, help="Worker threads")
        sub.add_argument("--logging", choices=["true", "false", "print"], default="true", help="Logging mode")
        sub.add_argument("--log_file", type=str, default=None, help="Log to this file instead of stderr")
        sub.add_argument("--no_progress", action="store_true", help="Hide progress bars")
        return sub

    common(subparsers.add_parser("viability", help="Compute the viability kernel and viable set"))
    sub = common(subparsers.add_parser("critical", help="Compute the critical set for the nominal policy"))
    sub.add_argument("--oracle", type=str, default=None, help="Reuse a stored q_viable.json")
    sub = common(subparsers.add_parser("learn", help="Run greedy on-policy constraint learning"))
    sub.add_argument("--oracle", type=str, default=None, help="Reuse a stored q_viable.json")
    sub.add_argument("--skip_metrics", action="store_true", help="Do not compute the oracle or metrics")
    sub = common(subparsers.add_parser("evaluate", help="Evaluate a stored run"))
    sub.add_argument("--run_dir", type=str, required=True, help="Run directory written by learn")
    sub.add_argument("--oracle", type=str, default=None, help="Reuse a stored q_viable.json")
    sub = common(subparsers.add_parser("sweep", help="Run learn for several seeds"))
    sub.add_argument("--seeds", type=int, nargs="+", required=True, help="Experiment seeds")
    sub.add_argument("--oracle", type=str, default=None, help="Reuse a stored q_viable.json")
    return parser


def run_command(args, logger):
    config = load_config(args.config)
    config = apply_overrides(
        config,
        seed=args.seed,
        output_dir=args.out,
        conservative=args.conservative_membership,
        num_threads=args.num_threads,
    )
    logger.info(f"Command '{args.command}' with config {config_to_dict(config)}")
    progress = not args.no_progress
    if args.command == "viability":
        return cmd_viability(config, logger, progress)
    if args.command == "critical":
        return cmd_critical(config, logger, args.oracle, progress)
    if args.command == "learn":
        return cmd_learn(config, logger, args.oracle, args.skip_metrics, progress)
    if args.command == "evaluate":
        return cmd_evaluate(args.run_dir, config, logger, args.oracle, progress)
    return cmd_sweep(config, args.seeds, logger, args.oracle, progress)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logger = make_logger(args.logging, args.log_file)
    try:
        run_command(args, logger)
    except ViabilityError as e:
        logger.error(e.one_line())
        print(e.one_line(), file=sys.stderr)
        sys.exit(e.exit_code)
    except Exception as e:
        reason = " ".join(str(e).split())
        logger.error(f"Unexpected error: {reason}")
        print(f"error 1 {type(e).__name__}: {reason}", file=sys.stderr)
        sys.exit(1)
    return 0


if __name__ == "__main__":
    main()
