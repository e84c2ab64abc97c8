#!/usr/bin/env python3
"""
EV Charging Station Control Runner

Runs the real-time controllers over a scenario and writes traces, metrics
and timing tables:

    python main.py run --method sg-admm --out results/
    python main.py compare --scenario sample_data/scenario --out results/
    python main.py sweep --evs 1..20 --out results/
    python main.py --seed 7 gen-scenario --out scenarios/day7
"""

import os
import sys
import json
import logging
import argparse
from typing import Dict, Any, List, Optional, Tuple

import pandas as pd

from config import Config, ConfigError, LoggingOptions
from metrics import extra_charging_time, summarize, timing_report
from scenario_io import (Scenario, ScheduleSeries, ScenarioError, generate_synthetic, load_scenario,
                         schedule_provider, write_scenario, write_scenario_json, write_schedule)
from simulator import CONTROLLERS, SimulationTrace, simulate, timing_sweep, write_trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_NONCONVERGED = 3


def parse_evs(text: str) -> List[int]:
    """'1..20' or '1,5,10'."""
    if '..' in text:
        lo, hi = text.split('..', 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in text.split(',') if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="EV charging station real-time control simulator")
    parser.add_argument('--config', default='config/config.yaml', help="YAML or JSON configuration file")
    parser.add_argument('--quantum', type=float, help="centralized power quantum (kW)")
    parser.add_argument('--seed', type=int, help="synthetic scenario seed")
    parser.add_argument('--max-iters', type=int, dest='max_iters', help="inner ADMM iteration cap")
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help="simulate one controller")
    run.add_argument('--scenario', help="scenario directory or JSON bundle (default: synthetic)")
    run.add_argument('--schedule', help="schedule CSV (default: heuristic schedule)")
    run.add_argument('--method', choices=sorted(CONTROLLERS), default='sg-admm')
    run.add_argument('--out', default='results')
    run.add_argument('--start', type=int, default=0, help="first simulated minute")
    run.add_argument('--minutes', type=int, help="number of simulated minutes")

    compare = sub.add_parser('compare', help="simulate every controller on the same scenario")
    compare.add_argument('--scenario')
    compare.add_argument('--schedule')
    compare.add_argument('--out', default='results')
    compare.add_argument('--start', type=int, default=0)
    compare.add_argument('--minutes', type=int)

    sweep = sub.add_parser('sweep', help="controller wall-clock against the number of connected EVs")
    sweep.add_argument('--evs', default='1..20')
    sweep.add_argument('--repeats', type=int, default=3)
    sweep.add_argument('--methods', default='sg-admm,admm,centralized')
    sweep.add_argument('--out', default='results')

    gen = sub.add_parser('gen-scenario', help="write a synthetic scenario")
    gen.add_argument('--out', required=True, help="output directory, or a .json bundle path")
    gen.add_argument('--days', type=int)
    gen.add_argument('--sessions', type=int, help="sessions per day")
    return parser


def config_overrides(args) -> Dict[str, Dict[str, Any]]:
    overrides: Dict[str, Dict[str, Any]] = {}
    if args.quantum is not None:
        overrides.setdefault('solver', {})['quantum'] = args.quantum
    if args.max_iters is not None:
        overrides.setdefault('solver', {})['max_inner_iters'] = args.max_iters
    if args.seed is not None:
        overrides.setdefault('synthetic', {})['seed'] = args.seed
    if getattr(args, 'days', None) is not None:
        overrides.setdefault('synthetic', {})['n_days'] = args.days
    if getattr(args, 'sessions', None) is not None:
        overrides.setdefault('synthetic', {})['sessions_per_day'] = args.sessions
    return overrides


def load_inputs(args, config: Config) -> Tuple[Scenario, ScheduleSeries]:
    params, grid = config.station_params(), config.time_grid()
    if args.scenario:
        scenario = load_scenario(args.scenario, params, grid)
    else:
        synthetic = config.synthetic_options()
        scenario = generate_synthetic(synthetic.seed, synthetic, params, grid, config.site_options())
    mode = 'file' if args.schedule else 'heuristic'
    schedule = schedule_provider(scenario, mode, params, grid, config.schedule_options(), args.schedule)
    return scenario, schedule


def run_method(method: str, scenario: Scenario, schedule: ScheduleSeries, config: Config, out_dir: str,
               start: int = 0, minutes: Optional[int] = None) -> Tuple[SimulationTrace, Dict[str, Any]]:
    params, grid = config.station_params(), config.time_grid()
    trace = simulate(scenario, method, schedule, params, config.hyperparams(), grid,
                     config.solver_options(), config.schedule_options(), start, minutes)
    write_trace(trace, out_dir)
    summary = summarize(trace, schedule, params, grid, config.metrics_options())
    with open(os.path.join(out_dir, f"metrics_{method}.json"), 'w') as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return trace, summary


def _write_timing(samples, out_dir: str):
    path = os.path.join(out_dir, 'timing.csv')
    timing_report(samples).to_csv(path, index=False)
    logger.info(f"Timing table written to {path}")


def _policy_exit(summaries: Dict[str, Dict[str, Any]], config: Config) -> int:
    limit = config.solver_options().max_nonconverged_fraction
    failing = {m: s['nonconverged_fraction'] for m, s in summaries.items() if s['nonconverged_fraction'] > limit}
    if failing:
        for method, fraction in failing.items():
            logger.warning(f"{method}: {fraction:.1%} of controlled steps hit the ADMM iteration cap "
                           f"(policy limit {limit:.1%})")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_run(args, config: Config) -> int:
    os.makedirs(args.out, exist_ok=True)
    scenario, schedule = load_inputs(args, config)
    trace, summary = run_method(args.method, scenario, schedule, config, args.out, args.start, args.minutes)
    _write_timing(trace.timing, args.out)
    with open(os.path.join(args.out, 'summary.json'), 'w') as f:
        json.dump({'methods': {args.method: summary},
                   'wall_clock_seconds': {args.method: sum(t['seconds'] for t in trace.timing)}},
                  f, indent=2, sort_keys=True)
    logger.info(f"{args.method}: net profit {summary['profit']['net_profit']:.2f}, "
                f"GCP-violation minutes {summary['gcp_violation_minutes']}")
    return _policy_exit({args.method: summary}, config)


def cmd_compare(args, config: Config) -> int:
    os.makedirs(args.out, exist_ok=True)
    scenario, schedule = load_inputs(args, config)
    traces, summaries, samples = {}, {}, []
    for method in CONTROLLERS:
        trace, summary = run_method(method, scenario, schedule, config, args.out, args.start, args.minutes)
        traces[method], summaries[method] = trace, summary
        samples.extend(trace.timing)

    reference = traces['uncontrolled']
    grid = config.time_grid()
    for method, trace in traces.items():
        if method == 'uncontrolled':
            continue
        delta = extra_charging_time(trace, reference, grid)
        delta.rename_axis('id').rename('extra_minutes').to_csv(os.path.join(args.out, f"extra_time_{method}.csv"))

    _write_timing(samples, args.out)
    wall_clock = {m: sum(t['seconds'] for t in traces[m].timing) for m in traces}
    with open(os.path.join(args.out, 'summary.json'), 'w') as f:
        json.dump({'methods': {m: {k: v for k, v in s.items() if k != 'fairness'} for m, s in summaries.items()},
                   'gini': {m: s['fairness']['gini'] for m, s in summaries.items()},
                   'wall_clock_seconds': wall_clock}, f, indent=2, sort_keys=True)
    return _policy_exit(summaries, config)


def cmd_sweep(args, config: Config) -> int:
    os.makedirs(args.out, exist_ok=True)
    methods = [m.strip() for m in args.methods.split(',') if m.strip()]
    unknown = [m for m in methods if m not in CONTROLLERS]
    if unknown:
        raise ConfigError('--methods', f"unknown controllers {unknown}")
    samples = timing_sweep(methods, parse_evs(args.evs), args.repeats, config.station_params(),
                           config.hyperparams(), config.time_grid(), config.solver_options(),
                           seed=config.synthetic_options().seed)
    pd.DataFrame(samples).to_csv(os.path.join(args.out, 'timing_samples.csv'), index=False)
    _write_timing(samples, args.out)
    return EXIT_OK


def cmd_gen_scenario(args, config: Config) -> int:
    params, grid = config.station_params(), config.time_grid()
    synthetic = config.synthetic_options()
    scenario = generate_synthetic(synthetic.seed, synthetic, params, grid, config.site_options())
    if args.out.endswith('.json'):
        directory = os.path.dirname(args.out)
        if directory:
            os.makedirs(directory, exist_ok=True)
        write_scenario_json(scenario, args.out)
    else:
        write_scenario(scenario, args.out, grid)
        schedule = schedule_provider(scenario, 'heuristic', params, grid, config.schedule_options())
        write_schedule(schedule, os.path.join(args.out, 'schedule.csv'), grid)
    logger.info(f"Scenario with {len(scenario.sessions)} sessions written to {args.out}")
    return EXIT_OK


COMMANDS = {
    'run': cmd_run,
    'compare': cmd_compare,
    'sweep': cmd_sweep,
    'gen-scenario': cmd_gen_scenario,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = Config(args.config, config_overrides(args))
    except ConfigError as e:
        logging.basicConfig(level=logging.INFO, format=LoggingOptions.format)
        logger.error(f"Invalid configuration: {str(e)}")
        return EXIT_VALIDATION

    log = config.logging_options()
    logging.basicConfig(level=getattr(logging, log.level.upper(), logging.INFO), format=log.format)

    try:
        return COMMANDS[args.command](args, config)
    except (ConfigError, ScenarioError) as e:
        logger.error(f"Validation error: {str(e)}")
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Run failed: {str(e)}")
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
