"""
Replicated, seeded experiment runs over a named preset or an inline target.

Replication r draws from RNG streams r·16 + k only, so any single
replication can be rerun on its own and reproduce the same chain.
Per-replication summaries are persisted as JSON; the aggregate is
recomputed from the summaries that belong to the run's configuration.
"""

import json
import logging
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np
from tqdm import tqdm

from .analysis import ChainSummary, rmse_report
from .errors import ConfigError, ParseError, RamLabError, StepError, ValidationError
from .linalg import LowerTriangularFactor, SymmetricMatrix, cholesky_factorize, symmetric_eigenvalues
from .presets import PresetCatalog, PresetConfig
from .proposals import ProposalSpec, RngStream
from .samplers import AdaptationSchedule, Algorithm, CsvRecordSink, SamplerConfig, run_chain

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STREAMS_PER_REPLICATION = 16
TARGET_STREAM = STREAMS_PER_REPLICATION - 1
START_SUBSTREAM = 1
MAX_SEED = 2 ** 64 - 1
INLINE_PRESET = 'inline'

# keys a [sampler.<algorithm>] table may override
SAMPLER_KEYS = ('alpha_star', 'gamma', 'covariance_gamma', 'am_regularization', 'eigen_bounds', 'proposal')
# keys of an inline [target] table that describe the protocol rather than the density
INLINE_PROTOCOL_KEYS = ('start', 'hpd_levels', 'truths', 'track_suboptimality', 'fixed_dim', 'default_dim')

CONFIG_KEYS = (
    'preset', 'target', 'sampler', 'dim', 'algorithms', 'replications', 'seed', 'thinning', 'output',
    'burn_in', 'iterations', 'alpha_star', 'gamma', 'covariance_gamma', 'proposal', 's1', 'eigen_bounds',
    'am_regularization', 'checkpoint_every', 'workers', 'only_replication',
)
TABLE_KEYS = ('target', 'sampler')


def inline_preset(table: Mapping) -> PresetConfig:
    """Preset for an experiment document's [target] table"""
    definition = {key: table[key] for key in INLINE_PROTOCOL_KEYS if key in table}
    definition['target'] = {key: value for key, value in table.items() if key not in INLINE_PROTOCOL_KEYS}
    definition['display_name'] = "Inline target"
    return PresetConfig.from_dict(INLINE_PRESET, definition)


def resolve_preset(name: str, inline_target: Optional[Mapping], catalog: PresetCatalog) -> PresetConfig:
    if inline_target is not None:
        return inline_preset(inline_target)
    return catalog.require(name)


def _settings_to_json(values: Mapping) -> dict:
    out = {}
    for key, value in sorted(values.items()):
        if isinstance(value, ProposalSpec):
            value = str(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


@dataclass
class ExperimentConfig:
    """Fully validated experiment: target plus sampler settings, optionally overridden per algorithm"""
    preset: str
    dim: int
    algorithms: List[str]
    replications: int
    seed: int = 0
    thinning: int = 10
    output: Path = Path("runs")
    burn_in: int = 100000
    iterations: int = 400000
    alpha_star: float = 0.234
    gamma: float = 2.0 / 3.0
    covariance_gamma: Optional[float] = None
    proposal: ProposalSpec = field(default_factory=ProposalSpec.student)
    s1: str = 'ident'
    eigen_bounds: Optional[Tuple[float, float]] = None
    am_regularization: float = 0.0
    checkpoint_every: int = 1000
    workers: int = 1
    only_replication: Optional[int] = None
    inline_target: Optional[dict] = None
    sampler_overrides: Dict[str, dict] = field(default_factory=dict)

    def settings_for(self, algorithm) -> dict:
        """Shared sampler settings with the algorithm's own table applied on top"""
        settings = {
            'alpha_star': self.alpha_star,
            'gamma': self.gamma,
            'covariance_gamma': self.covariance_gamma,
            'am_regularization': self.am_regularization,
            'eigen_bounds': self.eigen_bounds,
            'proposal': self.proposal,
        }
        settings.update(self.sampler_overrides.get(Algorithm(algorithm).value, {}))
        return settings

    def schedule_for(self, algorithm: Algorithm) -> AdaptationSchedule:
        # RAM uses min{1, d·n^-γ}; the covariance-based rules use plain n^-γ
        algorithm = Algorithm(algorithm)
        gamma = self.settings_for(algorithm)['gamma']
        return AdaptationSchedule(gamma, dimension_scaled=algorithm == Algorithm.RAM)

    def replication_ids(self) -> List[int]:
        if self.only_replication is not None:
            return [self.only_replication]
        return list(range(self.replications))

    def resolve_preset(self, catalog: PresetCatalog) -> PresetConfig:
        return resolve_preset(self.preset, self.inline_target, catalog)

    def sampler_config(self, algorithm: str, preset: PresetConfig, initial_point: np.ndarray,
                       initial_factor: LowerTriangularFactor) -> SamplerConfig:
        algorithm = Algorithm(algorithm)
        settings = self.settings_for(algorithm)
        covariance_schedule = None
        if settings['covariance_gamma'] is not None:
            covariance_schedule = AdaptationSchedule(settings['covariance_gamma'])
        return SamplerConfig(
            algorithm=algorithm,
            initial_factor=initial_factor,
            initial_point=initial_point,
            alpha_star=settings['alpha_star'],
            schedule=self.schedule_for(algorithm),
            covariance_schedule=covariance_schedule,
            eigen_bounds=settings['eigen_bounds'] if algorithm == Algorithm.RAM else None,
            am_regularization=settings['am_regularization'],
            burn_in=self.burn_in,
            iterations=self.iterations,
            proposal=settings['proposal'],
            checkpoint_every=self.checkpoint_every,
            hpd_levels=tuple(preset.hpd_levels),
            track_suboptimality=preset.track_suboptimality,
        )

    def to_dict(self) -> dict:
        """Settings that determine the results; output directory, workers and replication filter are not among them"""
        return {
            'preset': self.preset,
            'target': self.inline_target,
            'dim': self.dim,
            'algorithms': list(self.algorithms),
            'replications': self.replications,
            'seed': self.seed,
            'thinning': self.thinning,
            'burn_in': self.burn_in,
            'iterations': self.iterations,
            'alpha_star': self.alpha_star,
            'gamma': self.gamma,
            'covariance_gamma': self.covariance_gamma,
            'proposal': str(self.proposal),
            's1': self.s1,
            'eigen_bounds': list(self.eigen_bounds) if self.eigen_bounds else None,
            'am_regularization': self.am_regularization,
            'checkpoint_every': self.checkpoint_every,
            'sampler': {name: _settings_to_json(values) for name, values in sorted(self.sampler_overrides.items())},
        }


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _error_line(error: Exception) -> Optional[int]:
    line = getattr(error, 'lineno', None)
    if line is not None:
        return int(line)
    match = re.search(r"at line (\d+)", str(error))
    return int(match.group(1)) if match else None


def _check_int(doc: Mapping, key: str, minimum: int, errors: List[str]) -> None:
    value = doc[key]
    if not _is_int(value):
        errors.append(f"{key} must be an integer, got {value!r}")
    elif value < minimum:
        errors.append(f"{key} must be >= {minimum}, got {value}")


def _sampler_settings(values: Mapping, where: str, errors: List[str]) -> dict:
    """Validated, normalised copy of the sampler keys present in `values`"""
    prefix = f"{where}." if where else ""
    out = {}
    if 'alpha_star' in values:
        alpha_star = values['alpha_star']
        if not _is_number(alpha_star) or not 0.0 < alpha_star < 1.0:
            errors.append(f"{prefix}alpha_star must lie in (0, 1), got {alpha_star!r}")
        else:
            out['alpha_star'] = float(alpha_star)
    for key in ('gamma', 'covariance_gamma'):
        if key not in values:
            continue
        value = values[key]
        if value is None and key == 'covariance_gamma':
            out[key] = None
        elif not _is_number(value) or not 0.5 < value <= 1.0:
            errors.append(f"{prefix}{key} must lie in (1/2, 1], got {value!r}")
        else:
            out[key] = float(value)
    if 'am_regularization' in values:
        eps = values['am_regularization']
        if not _is_number(eps) or eps < 0:
            errors.append(f"{prefix}am_regularization must be non-negative, got {eps!r}")
        else:
            out['am_regularization'] = float(eps)
    if 'proposal' in values:
        proposal = values['proposal']
        if isinstance(proposal, ProposalSpec):
            out['proposal'] = proposal
        else:
            try:
                out['proposal'] = ProposalSpec.parse(str(proposal))
            except ValueError as e:
                errors.append(f"{prefix}{e}")
    if 'eigen_bounds' in values:
        bounds = values['eigen_bounds']
        if bounds is None:
            out['eigen_bounds'] = None
        else:
            if isinstance(bounds, str):
                bounds = bounds.split(',')
            try:
                lo, hi = (float(v) for v in bounds)
                if not 0.0 < lo <= hi < math.inf:
                    raise ValueError
                out['eigen_bounds'] = (lo, hi)
            except (TypeError, ValueError):
                errors.append(f"{prefix}eigen_bounds must be two numbers 0 < lo <= hi, "
                              f"got {values['eigen_bounds']!r}")
    return out


def parse_config(text: str, overrides: Optional[Mapping] = None,
                 catalog: Optional[PresetCatalog] = None) -> ExperimentConfig:
    """
    Parse a TOML experiment document.

    Top-level keys (all optional except the target):

        preset            registry name, e.g. "student2d-paper"
        [target]          inline target instead of a preset: `kind` plus the
                          registry's target parameters, and optionally start,
                          hpd_levels, truths, track_suboptimality, fixed_dim
        dim               dimension (fixed presets reject other values)
        algorithms        list from ram, am, aswam, asm, rwm
        replications      number of independent replications
        seed              u64 master seed
        burn_in, iterations, thinning, checkpoint_every
        alpha_star, gamma, covariance_gamma, proposal, eigen_bounds,
        am_regularization shared sampler settings
        [sampler.<algo>]  per-algorithm overrides of the sampler settings
        s1                ident, scaled:<c>, identity|small|large or a matrix file
        output, workers, only_replication

    `overrides` (typically CLI flags) replace document values when not None.
    Every defect is reported at once in a single ValidationError.
    `presets/experiment.example.toml` shows a complete document.
    """
    catalog = catalog or PresetCatalog()
    try:
        doc = tomllib.loads(text or "")
    except tomllib.TOMLDecodeError as e:
        raise ParseError(str(e), line=_error_line(e))

    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value

    errors = [f"unknown key '{key}'" for key in sorted(set(doc) - set(CONFIG_KEYS))]
    name = doc.get('preset')
    table = doc.get('target')
    if table is not None:
        if name is not None:
            raise ValidationError(errors + ["give either preset or a [target] table, not both"])
        if not isinstance(table, dict):
            raise ValidationError(errors + [f"target must be a table, got {table!r}"])
        try:
            preset = inline_preset(table)
        except ConfigError as e:
            raise ValidationError(errors + [f"target: {e}"])
    elif not isinstance(name, str):
        raise ValidationError(errors + ["preset (or an inline [target] table) is required"])
    else:
        preset = catalog.get_preset(name)
        if preset is None:
            raise ValidationError(errors + [catalog.unknown_message(name)])
    name = preset.name

    defaults = ExperimentConfig(preset=name, dim=preset.dim, algorithms=list(preset.algorithms),
                                replications=preset.replications, burn_in=preset.burn_in,
                                iterations=preset.iterations)
    for key in CONFIG_KEYS:
        if key not in doc and key not in TABLE_KEYS:
            doc[key] = getattr(defaults, key)

    _check_int(doc, 'dim', 1, errors)
    if _is_int(doc['dim']) and doc['dim'] >= 1:
        problem = preset.check_dim(doc['dim'])
        if problem:
            errors.append(problem)
        elif table is not None:
            _check_inline_target(preset, doc['dim'], errors)
    _check_int(doc, 'replications', 1, errors)
    _check_int(doc, 'thinning', 1, errors)
    _check_int(doc, 'burn_in', 0, errors)
    _check_int(doc, 'iterations', 1, errors)
    _check_int(doc, 'checkpoint_every', 1, errors)
    _check_int(doc, 'workers', 1, errors)
    _check_int(doc, 'seed', 0, errors)
    if _is_int(doc['seed']) and doc['seed'] > MAX_SEED:
        errors.append("seed must fit in 64 bits")

    only = doc['only_replication']
    if only is not None:
        if not _is_int(only) or only < 0:
            errors.append(f"only_replication must be a non-negative integer, got {only!r}")
        elif _is_int(doc['replications']) and only >= doc['replications']:
            errors.append(f"only_replication {only} outside 0..{doc['replications'] - 1}")

    algorithms = doc['algorithms']
    if isinstance(algorithms, str):
        algorithms = [a.strip() for a in algorithms.split(',') if a.strip()]
    if not isinstance(algorithms, list) or not algorithms:
        errors.append("algorithms must be a non-empty list")
        algorithms = []
    valid = {a.value for a in Algorithm}
    for a in algorithms:
        if a not in valid:
            errors.append(f"unknown algorithm '{a}'; expected one of {', '.join(sorted(valid))}")
    if len(set(algorithms)) != len(algorithms):
        errors.append("algorithms must be distinct; each writes its own output files")

    settings = _sampler_settings(doc, '', errors)
    sampler_overrides = _sampler_tables(doc.get('sampler', {}), algorithms, errors)

    if not isinstance(doc['s1'], str):
        errors.append(f"s1 must be a string, got {doc['s1']!r}")
    if not isinstance(doc['output'], (str, Path)):
        errors.append(f"output must be a path, got {doc['output']!r}")

    if not errors and _is_int(doc['dim']):
        bound_sets = [settings.get('eigen_bounds')]
        bound_sets += [values.get('eigen_bounds') for values in sampler_overrides.values()]
        try:
            factor = build_initial_factor(doc['s1'], doc['dim'], catalog)
            eig = symmetric_eigenvalues(factor.gram())
            for bounds in bound_sets:
                if bounds is not None and (eig[0] < bounds[0] or eig[-1] > bounds[1]):
                    errors.append(f"eigenvalues of s1·s1ᵀ [{eig[0]:.4g}, {eig[-1]:.4g}] outside eigen_bounds "
                                  f"[{bounds[0]}, {bounds[1]}]")
        except RamLabError as e:
            errors.append(f"s1: {e}")

    if errors:
        raise ValidationError(errors)

    return ExperimentConfig(
        preset=name,
        dim=doc['dim'],
        algorithms=algorithms,
        replications=doc['replications'],
        seed=doc['seed'],
        thinning=doc['thinning'],
        output=Path(doc['output']),
        burn_in=doc['burn_in'],
        iterations=doc['iterations'],
        alpha_star=settings['alpha_star'],
        gamma=settings['gamma'],
        covariance_gamma=settings['covariance_gamma'],
        proposal=settings['proposal'],
        s1=doc['s1'],
        eigen_bounds=settings['eigen_bounds'],
        am_regularization=settings['am_regularization'],
        checkpoint_every=doc['checkpoint_every'],
        workers=doc['workers'],
        only_replication=only,
        inline_target=dict(table) if table is not None else None,
        sampler_overrides=sampler_overrides,
    )


def _check_inline_target(preset: PresetConfig, dim: int, errors: List[str]) -> None:
    kind = preset.target['kind']
    try:
        target = preset.build_target(dim, 0, TARGET_STREAM)
    except KeyError as e:
        errors.append(f"target: {kind} target is missing parameter {e}")
        return
    except (RamLabError, TypeError, ValueError) as e:
        errors.append(f"target: cannot build a {dim}-dimensional {kind} target: {e}")
        return
    if target.metadata is None:
        if preset.start == 'location':
            errors.append(f"target: start = \"location\" needs a {kind} target with a known location")
        if preset.track_suboptimality:
            errors.append(f"target: track_suboptimality needs a {kind} target with a known shape")


def _sampler_tables(tables, algorithms: List[str], errors: List[str]) -> Dict[str, dict]:
    """Validated [sampler.<algorithm>] tables keyed by algorithm name"""
    if not isinstance(tables, dict):
        errors.append("sampler must be a table of per-algorithm tables such as [sampler.am]")
        return {}
    valid = {a.value for a in Algorithm}
    overrides = {}
    for algorithm, table in sorted(tables.items()):
        where = f"sampler.{algorithm}"
        if algorithm not in valid:
            errors.append(f"unknown algorithm '{algorithm}' in [{where}]")
            continue
        if algorithm not in algorithms:
            errors.append(f"[{where}] given but {algorithm} is not among the algorithms")
            continue
        if not isinstance(table, dict):
            errors.append(f"{where} must be a table, got {table!r}")
            continue
        errors.extend(f"unknown key '{key}' in [{where}]" for key in sorted(set(table) - set(SAMPLER_KEYS)))
        if algorithm != Algorithm.RAM.value and table.get('eigen_bounds') is not None:
            errors.append(f"{where}.eigen_bounds given, but eigen bounds only apply to ram")
        overrides[algorithm] = _sampler_settings(table, where, errors)
    return overrides


def build_initial_factor(s1: str, dim: int, catalog: Optional[PresetCatalog] = None) -> LowerTriangularFactor:
    """
    s₁ from `ident`, `scaled:<c>`, a catalog variant name or a matrix file.

    A lower-triangular file matrix is used as the factor itself; any other
    symmetric matrix is read as s₁s₁ᵀ and factorized.
    """
    name = s1.strip()
    if name in ('ident', 'identity'):
        return LowerTriangularFactor.identity(dim)
    if name.startswith('scaled:'):
        try:
            c = float(name.partition(':')[2])
        except ValueError:
            raise ConfigError(f"invalid scale in '{s1}'")
        if not c > 0:
            raise ConfigError(f"scale must be positive in '{s1}'")
        return LowerTriangularFactor.identity(dim, c)
    catalog = catalog or PresetCatalog()
    if name in catalog.initial_factors:
        return LowerTriangularFactor.identity(dim, catalog.initial_factors[name])

    path = Path(name)
    if not path.is_file():
        raise ConfigError(f"'{s1}' is neither ident, scaled:<c>, a known variant nor a readable file")
    try:
        M = np.atleast_2d(np.loadtxt(path, delimiter=None if path.suffix != '.csv' else ','))
    except ValueError as e:
        raise ConfigError(f"cannot read matrix from {path}: {e}")
    if M.shape != (dim, dim):
        raise ConfigError(f"matrix in {path} has shape {M.shape}, expected ({dim}, {dim})")
    if np.all(np.triu(M, 1) == 0.0) and np.all(np.diag(M) > 0.0):
        return LowerTriangularFactor(M)
    return cholesky_factorize(SymmetricMatrix(M))


def chain_stream(replication: int, algorithm: Algorithm) -> int:
    return replication * STREAMS_PER_REPLICATION + algorithm.stream_index


def target_stream(replication: int) -> int:
    return replication * STREAMS_PER_REPLICATION + TARGET_STREAM


def _artifact_name(algorithm: str, replication: int) -> str:
    return f"{algorithm}_rep{replication:04d}"


def _write_json(path: Path, data) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def run_replication(config: ExperimentConfig, preset: PresetConfig, replication: int,
                    initial_factor: LowerTriangularFactor, progress: bool = False) -> List[Path]:
    """Every configured algorithm on replication `replication`'s target; returns the summary files"""
    output = Path(config.output)
    (output / "chains").mkdir(parents=True, exist_ok=True)
    (output / "summaries").mkdir(parents=True, exist_ok=True)

    stream = target_stream(replication)
    target = preset.build_target(config.dim, config.seed, stream)
    x1 = preset.initial_point(target, RngStream(config.seed, stream, START_SUBSTREAM))
    written = []
    for name in config.algorithms:
        algorithm = Algorithm(name)
        sampler = config.sampler_config(algorithm, preset, x1, initial_factor)
        rng = RngStream(config.seed, chain_stream(replication, algorithm))
        stem = _artifact_name(algorithm.value, replication)
        with CsvRecordSink(output / "chains" / f"{stem}.csv", config.dim, config.thinning) as sink:
            summary = run_chain(sampler, target, rng, sink=sink, progress=progress)

        path = output / "summaries" / f"{stem}.json"
        _write_json(path, {
            'schema_version': SCHEMA_VERSION,
            'preset': config.preset,
            'dim': config.dim,
            'replication': replication,
            'target': target.describe(),
            'config': config.to_dict(),
            'summary': summary.to_dict(),
        })
        written.append(path)
    logger.info("Replication %d done (%s)", replication, ", ".join(config.algorithms))
    return written


def _bands(values) -> Dict[str, float]:
    v = np.asarray(values, dtype=np.float64)
    return {
        'median': float(np.median(v)),
        'p10': float(np.percentile(v, 10)),
        'p90': float(np.percentile(v, 90)),
    }


def _trajectory_bands(trajectories: List[List]) -> List[dict]:
    if not trajectories or not trajectories[0]:
        return []
    length = min(len(t) for t in trajectories)
    rows = []
    for i in range(length):
        row = {'n': int(trajectories[0][i][0])}
        row.update(_bands([t[i][1] for t in trajectories]))
        rows.append(row)
    return rows


def aggregate_summaries(docs: List[Mapping], preset: PresetConfig, dim: int) -> dict:
    """Medians, 10%/90% bands and RMSE tables per algorithm"""
    by_algorithm: Dict[str, List[Mapping]] = {}
    for doc in sorted(docs, key=lambda d: (d['summary']['algorithm'], d['replication'])):
        by_algorithm.setdefault(doc['summary']['algorithm'], []).append(doc)

    truths = preset.truth_values(dim)
    groups = preset.rmse_groups(dim)
    result = {}
    for algorithm, group in by_algorithm.items():
        summaries = [ChainSummary.from_dict(d['summary']) for d in group]
        entry = {
            'replications': [d['replication'] for d in group],
            'acceptance_rate': _bands([s.acceptance_rate for s in summaries]),
            'mean_alpha': _bands([s.mean_alpha for s in summaries]),
            'coordinate_means': [_bands(column) for column in
                                 np.array([s.coordinate_means for s in summaries]).T],
            'log_diag_checkpoints': _trajectory_bands([d['summary']['log_diag_trajectory'] for d in group]),
            'b_checkpoints': _trajectory_bands([d['summary']['b_trajectory'] for d in group]),
        }
        if all(s.hpd_outside_fraction is not None for s in summaries):
            entry['hpd_outside'] = _bands([s.hpd_outside_fraction for s in summaries])
        levels = sorted(summaries[0].hpd_inside_fractions)
        entry['hpd_inside'] = {repr(level): _bands([s.hpd_inside_fractions[level] for s in summaries])
                               for level in levels}
        if truths and len(summaries) >= 2:
            entry['rmse'] = rmse_report(summaries, truths, groups, preset.rmse_scale).to_dict()
        else:
            entry['rmse'] = None
        result[algorithm] = entry

    return {
        'schema_version': SCHEMA_VERSION,
        'preset': preset.name,
        'dim': dim,
        'truths': truths,
        'algorithms': result,
    }


def _read_summary(path: Path) -> dict:
    with open(path, 'r', encoding='utf-8') as f:
        doc = json.load(f)
    if doc.get('schema_version') != SCHEMA_VERSION:
        raise ConfigError(f"{path} has schema version {doc.get('schema_version')}, expected {SCHEMA_VERSION}")
    return doc


def load_summaries(run_dir) -> List[dict]:
    """
    Replication summaries under `run_dir` that belong to its experiment.json.

    Summaries left behind by an earlier run with another configuration are
    skipped with a warning; without experiment.json every summary is kept.
    """
    run_dir = Path(run_dir)
    paths = sorted((run_dir / "summaries").glob("*.json"))
    if not paths:
        raise ConfigError(f"No replication summaries under {run_dir}")
    docs = [_read_summary(path) for path in paths]

    experiment_file = run_dir / "experiment.json"
    if experiment_file.is_file():
        with open(experiment_file, 'r', encoding='utf-8') as f:
            expected = json.load(f)
        expected.pop('schema_version', None)
        matching = [doc for doc in docs if doc.get('config') == expected]
        if len(matching) < len(docs):
            logger.warning("Skipping %d summaries under %s written with a different configuration",
                           len(docs) - len(matching), run_dir)
        if not matching:
            raise ConfigError(f"No replication summaries under {run_dir} match {experiment_file}")
        docs = matching
    return docs


def aggregate_run(run_dir, catalog: Optional[PresetCatalog] = None) -> dict:
    """Aggregate recomputed from the persisted per-replication JSON"""
    docs = load_summaries(run_dir)
    catalog = catalog or PresetCatalog()
    config = docs[0]['config']
    preset = resolve_preset(docs[0]['preset'], config.get('target'), catalog)
    return aggregate_summaries(docs, preset, docs[0]['dim'])


def _failure(replication: int, error: BaseException) -> dict:
    report = {'replication': replication, 'error': type(error).__name__, 'message': str(error)}
    if isinstance(error, StepError):
        report['iteration'] = error.iteration
    return report


def run_experiment(config: ExperimentConfig, catalog: Optional[PresetCatalog] = None,
                   progress: bool = False) -> int:
    """
    Run the configured replications, then write aggregate.json; returns the process exit status.

    A full run aggregates exactly the summaries it wrote. A single-replication
    run aggregates every summary in the directory that matches its configuration.
    """
    catalog = catalog or PresetCatalog()
    preset = config.resolve_preset(catalog)
    output = Path(config.output)
    s1 = build_initial_factor(config.s1, config.dim, catalog)
    output.mkdir(parents=True, exist_ok=True)
    for stale in ("aggregate.json", "errors.json"):
        (output / stale).unlink(missing_ok=True)
    _write_json(output / "experiment.json", {'schema_version': SCHEMA_VERSION, **config.to_dict()})

    replications = config.replication_ids()
    failures = []
    written: List[Path] = []
    logger.info("Running %s (d=%d): %d replication(s) x %s",
                config.preset, config.dim, len(replications), ", ".join(config.algorithms))
    bar = tqdm(total=len(replications), disable=not progress, file=sys.stderr, desc="replications")
    if config.workers > 1 and len(replications) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {pool.submit(run_replication, config, preset, r, s1): r for r in replications}
            for future in as_completed(futures):
                try:
                    written.extend(future.result())
                except Exception as e:
                    logger.error("Replication %d failed: %s", futures[future], e)
                    failures.append(_failure(futures[future], e))
                bar.update(1)
    else:
        for r in replications:
            try:
                written.extend(run_replication(config, preset, r, s1, progress=progress))
            except Exception as e:
                logger.error("Replication %d failed: %s", r, e)
                failures.append(_failure(r, e))
            bar.update(1)
    bar.close()

    if failures:
        failures.sort(key=lambda f: f['replication'])
        _write_json(output / "errors.json", {'schema_version': SCHEMA_VERSION, 'failures': failures})
        return 1

    if config.only_replication is None:
        docs = [_read_summary(path) for path in sorted(written)]
    else:
        docs = load_summaries(output)
    _write_json(output / "aggregate.json", aggregate_summaries(docs, preset, config.dim))
    logger.info("Wrote %s", output / "aggregate.json")
    return 0
