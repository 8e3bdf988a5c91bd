#!/usr/bin/env python
import argparse
import logging
import os
import sys
from importlib import resources
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from ldp_unifier.distributions import binomial_distribution
from ldp_unifier.errors import ConfigError, UnifierError
from ldp_unifier.flow import run as run_experiment
from ldp_unifier.guardrails import ExperimentConfig
from ldp_unifier.mechanisms import krr_avg_eps, rappor_avg_eps
from ldp_unifier.metrics import prop2_bound, prop3_bound
from ldp_unifier.tools.fetch import GOWALLA_URL, fetch_gowalla
from ldp_unifier.tools.results import aggregate, emit_csv

THREADS_ENV = 'LDP_UNIFIER_THREADS'
LOG_FILE_ENV = 'LDP_UNIFIER_LOG_FILE'
LOG_LEVEL_ENV = 'LDP_UNIFIER_LOG_LEVEL'
DEFAULT_LOG_FILE = Path('logs') / 'app.log'
LOG_FORMAT = '%(asctime)s | %(levelname)s | %(name)s | %(message)s'
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def log_level() -> int:
    name = os.getenv(LOG_LEVEL_ENV, 'INFO').strip().upper()
    level = logging.getLevelNamesMapping().get(name)
    if level is None:
        raise ConfigError(f"{LOG_LEVEL_ENV} must be a logging level name, got {name!r}")
    return level


def setup_logging() -> logging.Logger:
    """Route the package logger to stderr and a rotating file.

    The file and level come from LDP_UNIFIER_LOG_FILE and LDP_UNIFIER_LOG_LEVEL.
    Calling it again replaces the handlers of the previous call.
    """
    level = log_level()
    log_file = Path(os.getenv(LOG_FILE_ENV) or DEFAULT_LOG_FILE)
    log_file.parent.mkdir(parents=True, exist_ok=True)

    logger = logging.getLogger('ldp_unifier')
    logger.setLevel(level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    fmt = logging.Formatter(LOG_FORMAT)
    for handler in (
        logging.StreamHandler(),
        RotatingFileHandler(log_file, maxBytes=512_000, backupCount=3),
    ):
        handler.setLevel(level)
        handler.setFormatter(fmt)
        logger.addHandler(handler)
    return logger


def load_environment() -> Optional[Path]:
    """Load ./.env without overriding variables already set; returns the file used."""
    env_path = Path('.env')
    if not env_path.is_file():
        return None
    load_dotenv(env_path, override=False)
    return env_path.absolute()


def default_threads() -> int:
    value = os.getenv(THREADS_ENV, '1')
    try:
        return max(int(value), 1)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}")


def preset_dir():
    return resources.files('ldp_unifier') / 'config' / 'presets'


def preset_names() -> List[str]:
    return sorted(p.name[:-len('.yaml')] for p in preset_dir().iterdir() if p.name.endswith('.yaml'))


def preset_text(name: str) -> str:
    path = preset_dir() / f'{name}.yaml'
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path.read_text(encoding='utf-8')


def resolve_config(ref: str) -> ExperimentConfig:
    """A config file path, or the name of a shipped preset."""
    if Path(ref).exists() or ref.endswith(('.yaml', '.yml')):
        return ExperimentConfig.load(ref)
    return ExperimentConfig.parse_raw_config(yaml.safe_load(preset_text(ref)), source=f'preset {ref}')


def cmd_run(args, logger) -> None:
    config = resolve_config(args.config)
    threads = args.threads if args.threads is not None else default_threads()
    rows = run_experiment(config, threads=threads, seed=args.seed)
    emit_csv(rows, args.out)


def cmd_presets(args, logger) -> None:
    if args.action == 'list':
        for name in preset_names():
            print(name)
    else:
        print(preset_text(args.name), end='')


def cmd_aggregate(args, logger) -> None:
    aggregate(args.src, args.out, args.stat)


def cmd_fetch(args, logger) -> None:
    fetch_gowalla(args.dest, args.url)


def cmd_bounds(args, logger) -> None:
    eps = np.asarray(args.eps, dtype=float)
    if np.any(eps <= 0):
        raise ConfigError("every epsilon must be positive")
    truth = binomial_distribution(args.k, args.alpha)
    if args.family == 'krr':
        eps_n = krr_avg_eps(eps, args.k)
        report = prop2_bound(truth, eps_n, args.n, args.k)
    else:
        eps_n = rappor_avg_eps(eps)
        report = prop3_bound(truth, eps_n, args.n, args.k)
    logger.info(f"{args.family} bound for n={args.n}, k={args.k}: eps[n]={eps_n:.6g}")
    print(report.model_dump_json())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ldp_unifier', description="Hidden-distribution estimation under mixed LDP mechanisms")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('run', help="run an experiment and write result rows as CSV")
    p.add_argument('--config', required=True, help="YAML config file or preset name")
    p.add_argument('--out', required=True, type=Path)
    p.add_argument('--seed', type=int, default=None, help="override data.seed")
    p.add_argument('--threads', type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser('presets', help="list or show the shipped mechanism-mixture presets")
    actions = p.add_subparsers(dest='action', required=True)
    actions.add_parser('list')
    show = actions.add_parser('show')
    show.add_argument('name')
    p.set_defaults(handler=cmd_presets)

    p = sub.add_parser('aggregate', help="median or mean per (n, estimator, post, metric)")
    p.add_argument('--in', dest='src', required=True, type=Path)
    p.add_argument('--out', required=True, type=Path)
    p.add_argument('--stat', choices=['median', 'mean'], default='median')
    p.set_defaults(handler=cmd_aggregate)

    p = sub.add_parser('fetch-gowalla', help="download the Gowalla check-in file")
    p.add_argument('--dest', type=Path, default=Path('data/gowalla_checkins.txt'))
    p.add_argument('--url', default=GOWALLA_URL)
    p.set_defaults(handler=cmd_fetch)

    p = sub.add_parser('bounds', help="expected squared l2 error of CM k-RR / CM-RAPPOR")
    p.add_argument('--family', choices=['krr', 'rappor'], required=True)
    p.add_argument('--eps', type=float, nargs='+', required=True, help="per-mechanism epsilons, equal weights")
    p.add_argument('--k', type=int, required=True)
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--alpha', type=float, default=0.5, help="binomial truth used for the sum of theta^2")
    p.set_defaults(handler=cmd_bounds)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    env_file = load_environment()
    try:
        logger = setup_logging()
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if env_file is not None:
        logger.info(f"Loaded .env from: {env_file}")
    try:
        args.handler(args, logger)
    except (ConfigError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (UnifierError, OSError) as e:
        logger.error(f"An error occurred while running {args.command}: {e}")
        return EXIT_RUNTIME
    return 0


if __name__ == '__main__':
    sys.exit(main())
