"""
Command-line surface: run experiments, verify theory, compute diagnostics.

Results go to stdout as JSON; logs, progress bars and error reports go
to stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from rich.console import Console
from rich.table import Table

from . import __version__
from .analysis import (descent_inner_product, estimate_g, estimate_mean_field, find_scale_fixed_point,
                       hpd_outside_fraction, lyapunov_value, suboptimality_b)
from .errors import ConfigError, ParseError, RamLabError, StepError, ValidationError
from .experiment import (aggregate_run, parse_config, run_experiment, target_stream)
from .linalg import LowerTriangularFactor, SymmetricMatrix, cholesky_factorize, relative_frobenius_error
from .log import setup_logging
from .presets import PresetCatalog, list_presets
from .proposals import ProposalSpec, RngStream
from .report import write_pdf_report
from .samplers import (AdaptationSchedule, Algorithm, SamplerConfig, coupled_affine_run, read_chain_csv,
                       run_chain)
from .targets import hpd_threshold

logger = logging.getLogger(__name__)

EXIT_RUNTIME = 1
EXIT_CONFIG = 2
AFFINE_TOLERANCE = 1e-8
ESTIMATOR_STREAM = 0


def _emit(result) -> None:
    print(json.dumps(result, indent=2, sort_keys=True))


def _error_report(error: Exception) -> dict:
    report = {'error': type(error).__name__, 'message': str(error)}
    if isinstance(error, ValidationError):
        report['errors'] = error.errors
    if isinstance(error, ParseError):
        report['line'] = error.line
        report['field'] = error.field
    if isinstance(error, StepError):
        report['iteration'] = error.iteration
    return report


def _matrix(text: str, name: str) -> np.ndarray:
    try:
        M = np.array(json.loads(text), dtype=np.float64)
    except (json.JSONDecodeError, TypeError, ValueError):
        raise ParseError(f"expected a JSON matrix such as [[1, 0], [0, 1]], got {text!r}", field=name)
    if M.ndim != 2:
        raise ParseError("expected a 2-d matrix", field=name)
    return M


def _floats(text: str, name: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ParseError(f"expected comma-separated numbers, got {text!r}", field=name)


def _preset_target(catalog: PresetCatalog, name: str, dim: Optional[int], seed: int):
    preset = catalog.require(name)
    dim = dim or preset.dim
    problem = preset.check_dim(dim)
    if problem:
        raise ValidationError([problem])
    return preset, preset.build_target(dim, seed, target_stream(0))


# run

def cmd_run(args, catalog: PresetCatalog) -> int:
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text(encoding='utf-8')
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}")
    overrides = {
        'preset': args.preset,
        'dim': args.dim,
        'algorithms': [a.strip() for a in args.algo.split(',')] if args.algo else None,
        'iterations': args.iters,
        'burn_in': args.burnin,
        'replications': args.reps,
        'seed': args.seed,
        'proposal': args.proposal,
        'gamma': args.gamma,
        'covariance_gamma': args.cov_gamma,
        'alpha_star': args.alpha_star,
        's1': args.s1,
        'eigen_bounds': args.eigen_bounds,
        'output': args.out,
        'thinning': args.thin,
        'checkpoint_every': args.checkpoint,
        'workers': args.workers,
        'only_replication': args.replication,
        'am_regularization': args.am_eps,
    }
    config = parse_config(text, overrides, catalog)
    status = run_experiment(config, catalog, progress=args.progress)
    output = Path(config.output)
    if status != 0:
        with open(output / "errors.json", 'r', encoding='utf-8') as f:
            print(json.dumps(json.load(f), indent=2), file=sys.stderr)
        return EXIT_RUNTIME
    _emit({'status': 'ok', 'output': str(output), 'aggregate': str(output / "aggregate.json")})
    return 0


# verify

def cmd_verify_mean_field(args, catalog: PresetCatalog) -> int:
    preset, target = _preset_target(catalog, args.preset, args.dim, args.seed)
    S = LowerTriangularFactor.identity(target.dim, args.theta)
    est = estimate_mean_field(S, target, ProposalSpec.parse(args.proposal), args.samples,
                              RngStream(args.seed, ESTIMATOR_STREAM), args.alpha_star, workers=args.workers)
    eig = np.linalg.eigvalsh(est.matrix.entries)
    _emit({
        'preset': preset.name,
        'dim': target.dim,
        'theta': args.theta,
        'samples': est.samples,
        'matrix': est.matrix.entries.tolist(),
        'standard_errors': est.standard_errors.tolist(),
        'trace': est.trace(),
        'trace_standard_error': est.trace_standard_error,
        'eigenvalues': eig.tolist(),
    })
    return 0


def cmd_verify_lyapunov(args, catalog: PresetCatalog) -> int:
    R = SymmetricMatrix(_matrix(args.R, 'R'))
    Rstar = SymmetricMatrix(_matrix(args.Rstar, 'Rstar'))
    result = {'lyapunov_value': lyapunov_value(R, Rstar)}
    if args.descent:
        _, target = _preset_target(catalog, args.preset, R.dim, args.seed)
        est = descent_inner_product(cholesky_factorize(R), Rstar, target, ProposalSpec.parse(args.proposal),
                                    args.samples, RngStream(args.seed, ESTIMATOR_STREAM), args.alpha_star,
                                    workers=args.workers)
        result['descent_inner_product'] = est.value
        result['standard_error'] = est.standard_error
    _emit(result)
    return 0


def cmd_verify_g(args, catalog: PresetCatalog) -> int:
    preset, target = _preset_target(catalog, args.preset, args.dim, args.seed)
    v = np.zeros(target.dim)
    v[0] = 1.0
    spec = ProposalSpec.parse(args.proposal)
    rows = []
    for theta in _floats(args.theta, 'theta'):
        est = estimate_g(theta, target, spec, v, args.samples, RngStream(args.seed, ESTIMATOR_STREAM),
                         workers=args.workers)
        rows.append({'theta': theta, 'g': est.value, 'standard_error': est.standard_error})
    _emit({'preset': preset.name, 'dim': target.dim, 'estimates': rows})
    return 0


def cmd_verify_stable_point(args, catalog: PresetCatalog) -> int:
    preset, target = _preset_target(catalog, args.preset, args.dim, args.seed)
    spec = ProposalSpec.parse(args.proposal)
    rng = RngStream(args.seed, ESTIMATOR_STREAM)
    theta = find_scale_fixed_point(target, spec, args.alpha_star, args.tol, rng, N=args.samples)
    at_root = estimate_mean_field(LowerTriangularFactor.identity(target.dim, theta), target, spec,
                                  args.samples, rng, args.alpha_star)
    result = {
        'preset': preset.name,
        'dim': target.dim,
        'theta_star': theta,
        'trace_at_theta_star': at_root.trace(),
        'trace_standard_error': at_root.trace_standard_error,
    }
    if args.iters:
        x1 = preset.initial_point(target, RngStream(args.seed, target_stream(0), 1))
        config = SamplerConfig(
            algorithm=Algorithm.RAM,
            initial_factor=LowerTriangularFactor.identity(target.dim),
            initial_point=x1,
            alpha_star=args.alpha_star,
            schedule=AdaptationSchedule(args.gamma, dimension_scaled=True),
            burn_in=0,
            iterations=args.iters,
            proposal=spec,
            checkpoint_every=max(1, args.iters // 10),
        )
        summary = run_chain(config, target, RngStream(args.seed, Algorithm.RAM.stream_index),
                            progress=args.progress)
        R = summary.factor_final.gram()
        result['ram_factor_gram'] = R.entries.tolist()
        result['relative_error'] = relative_frobenius_error(R, SymmetricMatrix.identity(target.dim, theta ** 2))
        result['acceptance_rate'] = summary.acceptance_rate
    _emit(result)
    return 0


def _random_affine_map(dim: int, rng: RngStream):
    """Well-conditioned A = Q·diag(e^z) with Q orthogonal, plus b ~ N(0, I)"""
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    A = Q * np.exp(0.5 * rng.standard_normal(dim))
    return A, rng.standard_normal(dim)


def cmd_verify_affine(args, catalog: PresetCatalog) -> int:
    preset, target = _preset_target(catalog, args.preset, args.dim, args.seed)
    x1 = preset.initial_point(target, RngStream(args.seed, target_stream(0), 1))
    config = SamplerConfig(
        algorithm=Algorithm.RAM,
        initial_factor=LowerTriangularFactor.identity(target.dim),
        initial_point=x1,
        alpha_star=args.alpha_star,
        schedule=AdaptationSchedule(args.gamma, dimension_scaled=True),
        proposal=ProposalSpec.parse(args.proposal),
    )
    trials = []
    for trial in range(args.trials):
        A, b = _random_affine_map(target.dim, RngStream(args.seed, trial, 2))
        report = coupled_affine_run(config, target, A, b, args.steps, RngStream(args.seed, trial))
        trials.append(report.to_dict())
    worst = max(max(t['max_point_error'], t['max_factor_error']) for t in trials)
    _emit({
        'preset': preset.name,
        'dim': target.dim,
        'steps': args.steps,
        'trials': trials,
        'max_error': worst,
        'passed': worst < AFFINE_TOLERANCE,
    })
    return 0 if worst < AFFINE_TOLERANCE else EXIT_RUNTIME


# diag

def cmd_diag_b(args, catalog: PresetCatalog) -> int:
    b = suboptimality_b(SymmetricMatrix(_matrix(args.R, 'R')), SymmetricMatrix(_matrix(args.Sigma, 'Sigma')))
    _emit({'b': b})
    return 0


def cmd_diag_hpd(args, catalog: PresetCatalog) -> int:
    preset = catalog.require(args.preset)
    dim = args.dim or preset.dim
    target = preset.build_target(dim, args.seed, target_stream(args.replication))
    columns = read_chain_csv(args.chain)
    try:
        X = np.column_stack([columns[f"x_{i}"] for i in range(1, dim + 1)])
    except KeyError as e:
        raise ConfigError(f"chain file {args.chain} lacks column {e}")
    if args.burnin:
        X = X[columns['n'] > args.burnin]
    if args.threshold is not None:
        threshold = args.threshold
    else:
        level = args.level or (max(preset.hpd_levels) if preset.hpd_levels else 0.9)
        threshold = hpd_threshold(target, level)
    _emit({
        'chain': str(args.chain),
        'samples': int(X.shape[0]),
        'threshold': threshold,
        'outside_fraction': hpd_outside_fraction(X, target, threshold),
    })
    return 0


# presets / report

def cmd_presets(args, catalog: PresetCatalog) -> int:
    listing = list_presets(catalog)
    if args.json:
        _emit(listing)
        return 0
    table = Table(title="Experiment presets")
    table.add_column("Name", style="bold", no_wrap=True)
    table.add_column("Target")
    table.add_column("d")
    table.add_column("Start")
    table.add_column("Algorithms")
    table.add_column("Protocol")
    for p in listing['presets']:
        target = ", ".join(f"{k}={v}" for k, v in p['target'].items())
        dim = f"{p['dim']}" if p['fixed_dim'] else f"{p['dim']} (default)"
        protocol = f"{p['burn_in']:,} + {p['iterations']:,} x {p['replications']}"
        table.add_row(p['name'], target, dim, p['start'], ", ".join(p['algorithms']), protocol)
    console = Console()
    console.print(table)
    console.print("Initial factors: " + ", ".join(f"{k} = {v}" for k, v in listing['initial_factors'].items()))
    return 0


def cmd_report(args, catalog: PresetCatalog) -> int:
    run_dir = Path(args.run_dir)
    aggregate_path = run_dir / "aggregate.json"
    if aggregate_path.is_file():
        with open(aggregate_path, 'r', encoding='utf-8') as f:
            aggregate = json.load(f)
    else:
        aggregate = aggregate_run(run_dir, catalog)
    path = write_pdf_report(aggregate, args.pdf or run_dir / "aggregate.pdf")
    _emit({'report': str(path)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ramlab", description="Robust adaptive Metropolis experiments")
    parser.add_argument('-v', '--verbose', action='count', default=0, help="-v for info, -vv for debug logs")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    parser.add_argument('--presets-file', type=Path, default=None, help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help="run a replicated experiment")
    run.add_argument('--preset')
    run.add_argument('--config', help="TOML experiment document")
    run.add_argument('--algo', help="ram|am|aswam|asm|rwm, comma separated")
    run.add_argument('--dim', type=int)
    run.add_argument('--iters', type=int)
    run.add_argument('--burnin', type=int)
    run.add_argument('--reps', type=int)
    run.add_argument('--seed', type=int)
    run.add_argument('--proposal', help="gaussian or student:<p>")
    run.add_argument('--gamma', type=float)
    run.add_argument('--cov-gamma', type=float, help="step-size exponent of the AM/ASWAM covariance")
    run.add_argument('--alpha-star', type=float)
    run.add_argument('--s1', help="ident, scaled:<c>, identity|small|large or a matrix file")
    run.add_argument('--eigen-bounds', help="lo,hi")
    run.add_argument('--am-eps', type=float, help="AM covariance regularization")
    run.add_argument('--out')
    run.add_argument('--thin', type=int)
    run.add_argument('--checkpoint', type=int)
    run.add_argument('--workers', type=int)
    run.add_argument('--replication', type=int, help="run only this replication index")
    run.add_argument('--progress', action='store_true')
    run.set_defaults(handler=cmd_run)

    verify = sub.add_parser('verify', help="Monte Carlo checks of the adaptation's theory")
    checks = verify.add_subparsers(dest='check', required=True)

    def estimator_args(p, preset='gaussian-spherical-d', samples=100000):
        p.add_argument('--preset', default=preset)
        p.add_argument('--dim', type=int)
        p.add_argument('--seed', type=int, default=0)
        p.add_argument('--samples', type=int, default=samples)
        p.add_argument('--alpha-star', type=float, default=0.234)
        p.add_argument('--proposal', default='student:1')
        p.add_argument('--workers', type=int, default=1)

    p = checks.add_parser('mean-field', help="estimate the mean field at theta*I")
    estimator_args(p)
    p.add_argument('--theta', type=float, default=1.0)
    p.set_defaults(handler=cmd_verify_mean_field)

    p = checks.add_parser('lyapunov', help="Lyapunov value and optional descent inner product")
    estimator_args(p)
    p.add_argument('--R', required=True, help="JSON matrix")
    p.add_argument('--Rstar', required=True, help="JSON matrix")
    p.add_argument('--descent', action='store_true')
    p.set_defaults(handler=cmd_verify_lyapunov)

    p = checks.add_parser('g', help="acceptance function g(theta) along e1")
    estimator_args(p)
    p.add_argument('--theta', default="0.25,0.5,1,2,4", help="comma-separated scales")
    p.set_defaults(handler=cmd_verify_g)

    p = checks.add_parser('stable-point', help="scalar fixed point and RAM consistency")
    estimator_args(p)
    p.add_argument('--tol', type=float, default=1e-3)
    p.add_argument('--iters', type=int, default=0, help="also run RAM for this many steps")
    p.add_argument('--gamma', type=float, default=2.0 / 3.0)
    p.add_argument('--progress', action='store_true')
    p.set_defaults(handler=cmd_verify_stable_point)

    p = checks.add_parser('affine', help="pathwise coupling of RAM on a target and its affine image")
    p.add_argument('--preset', default='student-rand-d')
    p.add_argument('--dim', type=int, default=3)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--steps', type=int, default=1000)
    p.add_argument('--trials', type=int, default=20)
    p.add_argument('--alpha-star', type=float, default=0.234)
    p.add_argument('--gamma', type=float, default=2.0 / 3.0)
    p.add_argument('--proposal', default='student:1')
    p.set_defaults(handler=cmd_verify_affine)

    diag = sub.add_parser('diag', help="chain diagnostics")
    diags = diag.add_subparsers(dest='diagnostic', required=True)
    p = diags.add_parser('b', help="suboptimality factor of R against Sigma")
    p.add_argument('--R', required=True, help="JSON matrix")
    p.add_argument('--Sigma', required=True, help="JSON matrix")
    p.set_defaults(handler=cmd_diag_b)

    p = diags.add_parser('hpd', help="fraction of a chain file outside an HPD region")
    p.add_argument('--chain', required=True, type=Path)
    p.add_argument('--preset', required=True)
    p.add_argument('--dim', type=int)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--replication', type=int, default=0)
    p.add_argument('--burnin', type=int, default=0)
    p.add_argument('--level', type=float)
    p.add_argument('--threshold', type=float)
    p.set_defaults(handler=cmd_diag_hpd)

    p = sub.add_parser('presets', help="list the experiment presets")
    p.add_argument('--json', action='store_true')
    p.set_defaults(handler=cmd_presets)

    p = sub.add_parser('report', help="render aggregate tables of a run as PDF")
    p.add_argument('--run-dir', required=True)
    p.add_argument('--pdf', type=Path)
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        catalog = PresetCatalog(args.presets_file) if args.presets_file else PresetCatalog()
        return args.handler(args, catalog)
    except ConfigError as e:
        print(json.dumps(_error_report(e), indent=2), file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(json.dumps(_error_report(e), indent=2), file=sys.stderr)
        return EXIT_CONFIG
    except RamLabError as e:
        print(json.dumps(_error_report(e), indent=2), file=sys.stderr)
        return EXIT_RUNTIME
