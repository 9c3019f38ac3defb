"""
Unnormalized target densities.

All densities are evaluated in log space with constants dropped; the
convention is log π(mode) = 0 for the elliptical families. Quadratic
forms use a whitening matrix computed once from the Cholesky factor of
the shape matrix.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import DimensionMismatch, InvalidState, MissingMetadata, NoExactSampler
from .linalg import SymmetricMatrix, cholesky_factorize
from .proposals import RngStream

logger = logging.getLogger(__name__)


class QuadraticForm:
    """x ↦ (x−m)ᵀ S⁻¹ (x−m) with S factored once"""

    def __init__(self, mean, shape: SymmetricMatrix):
        self.mean = np.array(mean, dtype=np.float64)
        self.factor = cholesky_factorize(shape)
        self.whitening = solve_triangular(self.factor.entries, np.eye(shape.dim), lower=True)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        W = (X - self.mean) @ self.whitening.T
        return np.sum(W * W, axis=-1)

    def color(self, Z: np.ndarray) -> np.ndarray:
        """Map standard normal rows to rows with mean m and shape S"""
        return self.mean + Z @ self.factor.entries.T


@dataclass(frozen=True, eq=False)
class TargetMetadata:
    """Known location and shape of a target, used only by diagnostics"""
    true_mean: np.ndarray
    true_shape: SymmetricMatrix


class TargetModel(ABC):
    kind: str = 'abstract'

    def __init__(self, dim: int, metadata: Optional[TargetMetadata] = None):
        if dim < 1:
            raise ValueError("Target dimension must be positive")
        self.dim = int(dim)
        self.metadata = metadata
        self._metadata_form: Optional[QuadraticForm] = None

    @abstractmethod
    def _log_density(self, X: np.ndarray) -> np.ndarray:
        """Log density of the rows of a (n, dim) array"""

    def log_density(self, x):
        """log π(x) up to a constant; accepts a point (dim,) or a batch (n, dim)"""
        X = np.asarray(x, dtype=np.float64)
        if X.ndim not in (1, 2) or X.shape[-1] != self.dim:
            raise DimensionMismatch(self.dim, X.shape[-1] if X.ndim else 0)
        if X.ndim == 1:
            return float(self._log_density(X[None, :])[0])
        return self._log_density(X)

    @property
    def has_exact_sampler(self) -> bool:
        return False

    def sample(self, rng: RngStream, count: int) -> np.ndarray:
        """`count` exact i.i.d. draws as rows"""
        raise NoExactSampler(f"No exact sampler for {self.kind} target")

    def hpd_form(self) -> QuadraticForm:
        if self.metadata is None:
            raise MissingMetadata(f"{self.kind} target has no known mean/shape")
        if self._metadata_form is None:
            self._metadata_form = QuadraticForm(self.metadata.true_mean, self.metadata.true_shape)
        return self._metadata_form

    @abstractmethod
    def affine_image(self, A: np.ndarray, b: np.ndarray) -> "TargetModel":
        """Density of AX + b for X ~ π"""

    def describe(self) -> dict:
        return {'kind': self.kind, 'dim': self.dim}


class GaussianTarget(TargetModel):
    kind = 'gaussian'

    def __init__(self, mean, covariance: SymmetricMatrix):
        mean = np.array(mean, dtype=np.float64)
        super().__init__(mean.shape[0], TargetMetadata(mean, covariance))
        if covariance.dim != self.dim:
            raise DimensionMismatch(self.dim, covariance.dim, "covariance")
        self.mean = mean
        self.covariance = covariance
        self._form = QuadraticForm(mean, covariance)

    def _log_density(self, X):
        return -0.5 * self._form(X)

    @property
    def has_exact_sampler(self) -> bool:
        return True

    def sample(self, rng, count):
        return self._form.color(rng.standard_normal((count, self.dim)))

    def affine_image(self, A, b):
        A = np.asarray(A, dtype=np.float64)
        return GaussianTarget(A @ self.mean + b, SymmetricMatrix(A @ self.covariance.entries @ A.T))

    def describe(self):
        return {**super().describe(), 'mean': self.mean.tolist(),
                'covariance': self.covariance.entries.tolist()}


class EllipticalStudentTarget(TargetModel):
    """π(x) ∝ (1 + (x−μ)ᵀΣ⁻¹(x−μ)/ν)^(-(ν+d)/2)"""
    kind = 'student'

    def __init__(self, location, pseudo_covariance: SymmetricMatrix, dof: float = 1.0):
        location = np.array(location, dtype=np.float64)
        super().__init__(location.shape[0], TargetMetadata(location, pseudo_covariance))
        if pseudo_covariance.dim != self.dim:
            raise DimensionMismatch(self.dim, pseudo_covariance.dim, "pseudo-covariance")
        if not dof > 0:
            raise ValueError(f"Degrees of freedom must be positive, got {dof}")
        self.location = location
        self.pseudo_covariance = pseudo_covariance
        self.dof = float(dof)
        self._form = QuadraticForm(location, pseudo_covariance)

    def _log_density(self, X):
        return -0.5 * (self.dof + self.dim) * np.log1p(self._form(X) / self.dof)

    @property
    def has_exact_sampler(self) -> bool:
        return True

    def sample(self, rng, count):
        Z = rng.standard_normal((count, self.dim))
        G = rng.chisquare(self.dof, count)
        return self.location + (Z @ self._form.factor.entries.T) / np.sqrt(G / self.dof)[:, None]

    def affine_image(self, A, b):
        A = np.asarray(A, dtype=np.float64)
        return EllipticalStudentTarget(
            A @ self.location + b,
            SymmetricMatrix(A @ self.pseudo_covariance.entries @ A.T),
            self.dof,
        )

    def describe(self):
        return {**super().describe(), 'location': self.location.tolist(),
                'pseudo_covariance': self.pseudo_covariance.entries.tolist(), 'dof': self.dof}


class GaussianMixtureTarget(TargetModel):
    kind = 'mixture'

    def __init__(self, weights: Sequence[float], means, shared_covariance: SymmetricMatrix):
        weights = np.array(weights, dtype=np.float64)
        means = np.atleast_2d(np.array(means, dtype=np.float64))
        if weights.ndim != 1 or weights.shape[0] != means.shape[0]:
            raise ValueError("Need one weight per mixture component")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("Mixture weights must be positive and sum to one")
        dim = means.shape[1]
        if shared_covariance.dim != dim:
            raise DimensionMismatch(dim, shared_covariance.dim, "covariance")

        center = weights @ means
        spread = (means - center).T @ ((means - center) * weights[:, None])
        super().__init__(dim, TargetMetadata(center, SymmetricMatrix(shared_covariance.entries + spread)))

        self.weights = weights
        self.means = means
        self.shared_covariance = shared_covariance
        self._log_weights = np.log(weights)
        self._forms = [QuadraticForm(m, shared_covariance) for m in means]

    def _log_density(self, X):
        terms = np.stack([lw - 0.5 * form(X) for lw, form in zip(self._log_weights, self._forms)], axis=-1)
        if terms.shape[-1] == 1:
            return terms[..., 0]
        return logsumexp(terms, axis=-1)

    @property
    def has_exact_sampler(self) -> bool:
        return True

    def sample(self, rng, count):
        labels = rng.generator.choice(len(self.weights), size=count, p=self.weights)
        Z = rng.standard_normal((count, self.dim))
        return self.means[labels] + Z @ self._forms[0].factor.entries.T

    def affine_image(self, A, b):
        A = np.asarray(A, dtype=np.float64)
        return GaussianMixtureTarget(
            self.weights,
            self.means @ A.T + b,
            SymmetricMatrix(A @ self.shared_covariance.entries @ A.T),
        )

    def describe(self):
        return {**super().describe(), 'weights': self.weights.tolist(), 'means': self.means.tolist(),
                'shared_covariance': self.shared_covariance.entries.tolist()}


def standard_normal_1d(x):
    return -0.5 * x * x


def standard_cauchy_1d(x):
    return -np.log1p(x * x)


class ProductTarget(TargetModel):
    """i.i.d. coordinates with a common one-dimensional log density"""
    kind = 'product'

    def __init__(self, log_density_1d: Callable, dim: int, name: str = 'custom',
                 sampler_1d: Optional[Callable] = None, metadata: Optional[TargetMetadata] = None):
        super().__init__(dim, metadata)
        self.log_density_1d = log_density_1d
        self.name = name
        self.sampler_1d = sampler_1d

    @classmethod
    def normal(cls, dim: int) -> "ProductTarget":
        return cls(standard_normal_1d, dim, 'normal',
                   lambda rng, shape: rng.standard_normal(shape),
                   TargetMetadata(np.zeros(dim), SymmetricMatrix.identity(dim)))

    @classmethod
    def cauchy(cls, dim: int) -> "ProductTarget":
        return cls(standard_cauchy_1d, dim, 'cauchy',
                   lambda rng, shape: rng.generator.standard_cauchy(shape))

    def _log_density(self, X):
        return np.sum(self.log_density_1d(X), axis=-1)

    @property
    def has_exact_sampler(self) -> bool:
        return self.sampler_1d is not None

    def sample(self, rng, count):
        if self.sampler_1d is None:
            return super().sample(rng, count)
        return self.sampler_1d(rng, (count, self.dim))

    def affine_image(self, A, b):
        return _affine_custom(self, A, b)

    def describe(self):
        return {**super().describe(), 'marginal': self.name}


class CustomTarget(TargetModel):
    """User log density; `vectorized` functions receive the whole (n, dim) batch"""
    kind = 'custom'

    def __init__(self, dim: int, log_density_fn: Callable, sampler: Optional[Callable] = None,
                 metadata: Optional[TargetMetadata] = None, vectorized: bool = False):
        super().__init__(dim, metadata)
        self.log_density_fn = log_density_fn
        self.sampler = sampler
        self.vectorized = vectorized

    def _log_density(self, X):
        if self.vectorized:
            return np.asarray(self.log_density_fn(X), dtype=np.float64)
        return np.array([self.log_density_fn(x) for x in X], dtype=np.float64)

    @property
    def has_exact_sampler(self) -> bool:
        return self.sampler is not None

    def sample(self, rng, count):
        if self.sampler is None:
            return super().sample(rng, count)
        return self.sampler(rng, count)

    def affine_image(self, A, b):
        return _affine_custom(self, A, b)


def _affine_custom(base: TargetModel, A, b) -> CustomTarget:
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _, logabsdet = np.linalg.slogdet(A)
    A_inv = np.linalg.inv(A)

    def log_density_fn(X):
        return base.log_density((X - b) @ A_inv.T) - logabsdet

    sampler = None
    if base.has_exact_sampler:
        def sampler(rng, count):
            return base.sample(rng, count) @ A.T + b

    metadata = None
    if base.metadata is not None:
        metadata = TargetMetadata(A @ base.metadata.true_mean + b,
                                  SymmetricMatrix(A @ base.metadata.true_shape.entries @ A.T))
    return CustomTarget(base.dim, log_density_fn, sampler, metadata, vectorized=True)


def log_density(target: TargetModel, x):
    return target.log_density(x)


def acceptance_from_logs(log_y: float, log_x: float) -> float:
    """min{1, exp(log π(y) − log π(x))}"""
    if log_x == -math.inf:
        raise InvalidState("Current point has zero target density")
    if not log_y > -math.inf:
        return 0.0
    return math.exp(min(0.0, log_y - log_x))


def acceptance_ratio(target: TargetModel, y, x) -> float:
    return acceptance_from_logs(target.log_density(y), target.log_density(x))


def random_covariance(dim: int, seed: int, stream_id: int = 0) -> SymmetricMatrix:
    """Σ = M·Mᵀ with i.i.d. standard normal M"""
    if dim < 1:
        raise ValueError("Dimension must be positive")
    M = RngStream(seed, stream_id).standard_normal((dim, dim))
    return SymmetricMatrix(M @ M.T)


def hpd_quadratic(target: TargetModel, x):
    """(x−μ)ᵀΣ⁻¹(x−μ) from the target's metadata; point or batch"""
    X = np.asarray(x, dtype=np.float64)
    if X.shape[-1] != target.dim:
        raise DimensionMismatch(target.dim, X.shape[-1])
    q = target.hpd_form()(X)
    return float(q) if X.ndim == 1 else q


def hpd_threshold(target: TargetModel, level: float) -> float:
    """Quadratic-form radius of the `level` highest-density set (elliptical targets)"""
    if not 0.0 < level < 1.0:
        raise ValueError("HPD level must lie in (0, 1)")
    if isinstance(target, EllipticalStudentTarget):
        return float(target.dim * stats.f.ppf(level, target.dim, target.dof))
    if isinstance(target, GaussianTarget) or (isinstance(target, ProductTarget) and target.name == 'normal'):
        return float(stats.chi2.ppf(level, target.dim))
    raise MissingMetadata(f"No closed-form HPD region for {target.kind} target")


def affine_image(target: TargetModel, A, b) -> TargetModel:
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.shape != (target.dim, target.dim) or b.shape != (target.dim,):
        raise DimensionMismatch(target.dim, A.shape[0], "affine map")
    return target.affine_image(A, b)
