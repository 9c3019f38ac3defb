import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError, ValidationError
from .analysis import hpd_statistic_name
from .linalg import SymmetricMatrix
from .proposals import RngStream
from .targets import (EllipticalStudentTarget, GaussianMixtureTarget, GaussianTarget, ProductTarget,
                      TargetModel, random_covariance)

logger = logging.getLogger(__name__)

DEFAULT_PRESETS_FILE = Path(__file__).resolve().parent.parent / "presets" / "presets.json"
START_RULES = ('location', 'steady-state', 'origin')
TRUTH_RULES = ('hpd', 'means', 'none')
TARGET_KINDS = ('gaussian', 'student', 'mixture', 'product')


@dataclass
class PresetConfig:
    """Configuration for a named experiment target and protocol"""
    name: str
    display_name: str
    section: str
    target: Dict
    start: str
    hpd_levels: List[float]
    truths: str
    track_suboptimality: bool
    algorithms: List[str]
    burn_in: int
    iterations: int
    replications: int
    description: str
    fixed_dim: Optional[int] = None
    default_dim: int = 2

    @classmethod
    def from_dict(cls, name: str, config: Dict) -> "PresetConfig":
        """Preset from one registry entry (or an inline experiment target)"""
        target = config.get('target')
        if not isinstance(target, dict) or 'kind' not in target:
            raise ConfigError(f"Preset '{name}' needs a target table with a kind")
        if target['kind'] not in TARGET_KINDS:
            raise ConfigError(f"Preset '{name}' has unsupported target kind '{target['kind']}'; "
                              f"expected one of {', '.join(TARGET_KINDS)}")
        start = config.get('start', 'origin')
        if start not in START_RULES:
            raise ConfigError(f"Preset '{name}' has unknown start rule '{start}'")
        truths = config.get('truths', 'none')
        if truths not in TRUTH_RULES:
            raise ConfigError(f"Preset '{name}' has unknown truths rule '{truths}'")
        hpd_levels = config.get('hpd_levels', [])
        if truths == 'hpd' and not hpd_levels:
            raise ConfigError(f"Preset '{name}' compares HPD coverage but lists no hpd_levels")
        return cls(
            name=name,
            display_name=config.get('display_name', name),
            section=config.get('section', ''),
            target=target,
            start=start,
            hpd_levels=[float(v) for v in hpd_levels],
            truths=truths,
            track_suboptimality=config.get('track_suboptimality', False),
            algorithms=config.get('algorithms', ['ram']),
            burn_in=config.get('burn_in', 100000),
            iterations=config.get('iterations', 400000),
            replications=config.get('replications', 1),
            description=config.get('description', ''),
            fixed_dim=config.get('fixed_dim'),
            default_dim=config.get('default_dim', config.get('fixed_dim', 2)),
        )

    @property
    def dim(self) -> int:
        return self.fixed_dim or self.default_dim

    def check_dim(self, dim: int) -> Optional[str]:
        if dim < 1:
            return f"dimension must be positive, got {dim}"
        if self.fixed_dim is not None and dim != self.fixed_dim:
            return f"preset '{self.name}' is fixed to dimension {self.fixed_dim}, got {dim}"
        return None

    def build_target(self, dim: int, seed: int, stream_id: int) -> TargetModel:
        """Target for one replication; random shapes are keyed by (seed, stream_id)"""
        spec = self.target
        kind = spec['kind']
        if kind in ('gaussian', 'student'):
            key = 'covariance' if kind == 'gaussian' else 'pseudo_covariance'
            shape = spec[key]
            if shape == 'random':
                shape = random_covariance(dim, seed, stream_id)
            elif shape == 'identity':
                shape = SymmetricMatrix.identity(dim)
            else:
                shape = SymmetricMatrix(np.array(shape))
            center = np.array(spec.get('location', spec.get('mean', np.zeros(dim))), dtype=np.float64)
            if kind == 'gaussian':
                return GaussianTarget(center, shape)
            return EllipticalStudentTarget(center, shape, spec.get('dof', 1.0))
        if kind == 'mixture':
            m1 = np.zeros(dim)
            m1[0] = spec['first_mean']
            variances = np.full(dim, spec['other_variance'])
            variances[0] = spec['first_variance']
            return GaussianMixtureTarget(spec['weights'], np.stack([m1, -m1]), SymmetricMatrix.diagonal(variances))
        if kind == 'product':
            if spec['marginal'] == 'cauchy':
                return ProductTarget.cauchy(dim)
            if spec['marginal'] == 'normal':
                return ProductTarget.normal(dim)
        raise ConfigError(f"Preset '{self.name}' has unsupported target kind '{kind}'")

    def initial_point(self, target: TargetModel, rng: RngStream) -> np.ndarray:
        if self.start == 'location':
            return target.metadata.true_mean.copy()
        if self.start == 'steady-state':
            return target.sample(rng, 1)[0]
        return np.zeros(target.dim)

    def truth_values(self, dim: int) -> Dict[str, float]:
        if self.truths == 'hpd':
            return {hpd_statistic_name(level): level for level in self.hpd_levels}
        if self.truths == 'means':
            return {f"mean_{i}": 0.0 for i in range(1, dim + 1)}
        return {}

    def rmse_groups(self, dim: int) -> Dict[str, List[str]]:
        if self.truths == 'hpd':
            return {'hpd': [hpd_statistic_name(level) for level in self.hpd_levels]}
        if self.truths == 'means':
            groups = {'x1': ['mean_1']}
            if dim > 1:
                groups['x2..d'] = [f"mean_{i}" for i in range(2, dim + 1)]
            return groups
        return {}

    @property
    def rmse_scale(self) -> float:
        # proportions are reported in percentage points
        return 100.0 if self.truths == 'hpd' else 1.0

    def describe(self, dim: Optional[int] = None) -> dict:
        dim = dim or self.dim
        parameters = dict(self.target)
        if self.target['kind'] == 'mixture':
            target = self.build_target(dim, 0, 0)
            parameters = {'weights': target.weights.tolist(), 'means': target.means.tolist(),
                          'shared_covariance': np.diag(target.shared_covariance.entries).tolist()}
        return {
            'name': self.name,
            'display_name': self.display_name,
            'section': self.section,
            'dim': dim,
            'fixed_dim': self.fixed_dim is not None,
            'target': parameters,
            'start': self.start,
            'hpd_levels': self.hpd_levels,
            'algorithms': self.algorithms,
            'burn_in': self.burn_in,
            'iterations': self.iterations,
            'replications': self.replications,
            'description': self.description,
        }


class PresetCatalog:
    """Manages preset configurations loaded from the preset registry"""

    def __init__(self, presets_file: Path = DEFAULT_PRESETS_FILE):
        self.presets_file = Path(presets_file)
        self.presets: Dict[str, PresetConfig] = {}
        self.initial_factors: Dict[str, float] = {}
        self.load_presets()

    def load_presets(self):
        """Load preset configurations from the JSON registry"""
        try:
            with open(self.presets_file, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot load presets from {self.presets_file}: {e}")

        self.initial_factors = {k: float(v) for k, v in data.get('initial_factors', {}).items()}
        for name, config in data.get('presets', {}).items():
            self.presets[name] = PresetConfig.from_dict(name, config)
        logger.debug("Loaded %d presets from %s", len(self.presets), self.presets_file)

    def get_presets(self) -> Dict[str, PresetConfig]:
        return self.presets

    def get_preset(self, name: str) -> Optional[PresetConfig]:
        return self.presets.get(name)

    def require(self, name: str) -> PresetConfig:
        preset = self.get_preset(name)
        if preset is None:
            raise ValidationError([self.unknown_message(name)])
        return preset

    def unknown_message(self, name: str) -> str:
        return f"unknown preset '{name}'; available presets: {', '.join(sorted(self.presets))}"


def list_presets(catalog: Optional[PresetCatalog] = None) -> dict:
    """Every preset with its parameters plus the initial-factor variants"""
    catalog = catalog or PresetCatalog()
    return {
        'presets': [preset.describe() for _, preset in sorted(catalog.get_presets().items())],
        'initial_factors': {name: f"{scale:g}*I" for name, scale in catalog.initial_factors.items()},
    }
