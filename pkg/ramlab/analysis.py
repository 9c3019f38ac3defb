"""
Monte Carlo checks of the adaptation's mean field and the chain diagnostics.

Estimators split their N samples into shards; shard i draws from
`rng.shard(i)` and partial sums are merged in shard order, so an
estimate is a deterministic function of (seed, stream id, N) whatever
the number of workers. Calling an estimator twice with the same stream
therefore reuses the same random numbers.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import EmptyInput, NoExactSampler, NoSignChange, NotPositiveDefinite
from .linalg import (LowerTriangularFactor, SymmetricMatrix, cholesky_factorize,
                     symmetric_eigenvalues, symmetric_power)
from .proposals import ProposalSpec, RngStream, sample_increments, sample_radii
from .targets import TargetModel, hpd_quadratic

logger = logging.getLogger(__name__)

DEFAULT_SHARD_SIZE = 100_000
MIN_SAMPLES = 1_000


@dataclass(frozen=True)
class ScalarEstimate:
    value: float
    standard_error: float
    samples: int

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True, eq=False)
class MeanFieldEstimate:
    """Estimate of h_π(S) = E[S(α − α*)ũũᵀSᵀ] with per-entry standard errors"""
    matrix: SymmetricMatrix
    standard_errors: np.ndarray
    samples: int
    trace_standard_error: float = math.nan

    def trace(self) -> float:
        return self.matrix.trace()


@dataclass
class ChainSummary:
    algorithm: str
    acceptance_rate: float
    coordinate_means: np.ndarray
    factor_final: LowerTriangularFactor
    hpd_outside_fraction: Optional[float] = None
    hpd_inside_fractions: Dict[float, float] = field(default_factory=dict)
    b_trajectory: List[Tuple[int, float]] = field(default_factory=list)
    log_diag_trajectory: List[Tuple[int, float]] = field(default_factory=list)
    mean_alpha: float = math.nan
    burn_in: int = 0
    iterations: int = 0

    def __post_init__(self):
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise ValueError(f"Acceptance rate {self.acceptance_rate} outside [0, 1]")
        self.coordinate_means = np.asarray(self.coordinate_means, dtype=np.float64)

    def tracked_statistics(self) -> Dict[str, float]:
        """Flat name → value view used by the RMSE tables"""
        stats = {'acceptance_rate': self.acceptance_rate}
        for i, m in enumerate(self.coordinate_means, start=1):
            stats[f"mean_{i}"] = float(m)
        for level, fraction in self.hpd_inside_fractions.items():
            stats[hpd_statistic_name(level)] = fraction
        if self.hpd_outside_fraction is not None:
            stats['hpd_outside'] = self.hpd_outside_fraction
        return stats

    def to_dict(self) -> dict:
        return {
            'algorithm': self.algorithm,
            'acceptance_rate': self.acceptance_rate,
            'mean_alpha': self.mean_alpha,
            'coordinate_means': self.coordinate_means.tolist(),
            'hpd_outside_fraction': self.hpd_outside_fraction,
            'hpd_inside_fractions': {repr(float(k)): v for k, v in sorted(self.hpd_inside_fractions.items())},
            'b_trajectory': [[n, b] for n, b in self.b_trajectory],
            'log_diag_trajectory': [[n, v] for n, v in self.log_diag_trajectory],
            'factor_final': self.factor_final.entries.tolist(),
            'burn_in': self.burn_in,
            'iterations': self.iterations,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ChainSummary":
        return cls(
            algorithm=data['algorithm'],
            acceptance_rate=data['acceptance_rate'],
            coordinate_means=np.array(data['coordinate_means']),
            factor_final=LowerTriangularFactor(np.array(data['factor_final'])),
            hpd_outside_fraction=data.get('hpd_outside_fraction'),
            hpd_inside_fractions={float(k): v for k, v in data.get('hpd_inside_fractions', {}).items()},
            b_trajectory=[(int(n), b) for n, b in data.get('b_trajectory', [])],
            log_diag_trajectory=[(int(n), v) for n, v in data.get('log_diag_trajectory', [])],
            mean_alpha=data.get('mean_alpha', math.nan),
            burn_in=data.get('burn_in', 0),
            iterations=data.get('iterations', 0),
        )


def hpd_statistic_name(level: float) -> str:
    return f"hpd_{int(round(level * 100))}"


def _shard_sizes(N: int, shard_size: int) -> List[int]:
    return [min(shard_size, N - start) for start in range(0, N, shard_size)]


def _map_shards(fn, N: int, rng: RngStream, shard_size: int, workers: int) -> list:
    """Run fn(shard_rng, count) per shard; results come back in shard order"""
    tasks = [(rng.shard(i), count) for i, count in enumerate(_shard_sizes(N, shard_size))]
    if workers <= 1 or len(tasks) == 1:
        return [fn(r, c) for r, c in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))


def _acceptance_batch(target: TargetModel, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    log_x = target.log_density(X)
    log_y = target.log_density(Y)
    with np.errstate(invalid='ignore'):
        diff = np.where(np.isneginf(log_y), -np.inf, log_y - log_x)
    return np.exp(np.minimum(0.0, diff))


def _require_sampler(target: TargetModel) -> None:
    if not target.has_exact_sampler:
        raise NoExactSampler(f"{target.kind} target has no exact sampler")


def _mean_field_terms(S: LowerTriangularFactor, target: TargetModel, spec: ProposalSpec,
                      alpha_star: float, rng: RngStream, count: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample weights α − α* and directions z = S·u/‖u‖"""
    X = target.sample(rng, count)
    U = sample_increments(spec, target.dim, rng, count)
    Y = X + U @ S.entries.T
    Z = (U / np.linalg.norm(U, axis=1)[:, None]) @ S.entries.T
    return _acceptance_batch(target, X, Y) - alpha_star, Z


def _check_samples(N: int) -> None:
    if N < MIN_SAMPLES:
        raise ValueError(f"Need at least {MIN_SAMPLES} samples, got {N}")


def estimate_mean_field(S: LowerTriangularFactor, target: TargetModel, spec: ProposalSpec, N: int,
                        rng: RngStream, alpha_star: float = 0.234,
                        shard_size: int = DEFAULT_SHARD_SIZE, workers: int = 1) -> MeanFieldEstimate:
    """Unbiased Monte Carlo estimate of the mean field at S"""
    _require_sampler(target)
    _check_samples(N)

    def shard(shard_rng, count):
        w, Z = _mean_field_terms(S, target, spec, alpha_star, shard_rng, count)
        t = w * np.sum(Z * Z, axis=1)
        return (np.einsum('n,ni,nj->ij', w, Z, Z),
                np.einsum('n,ni,nj->ij', w * w, Z * Z, Z * Z),
                t.sum(), (t * t).sum())

    parts = _map_shards(shard, N, rng, shard_size, workers)
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    trace_sum = sum(p[2] for p in parts)
    trace_sq = sum(p[3] for p in parts)

    mean = total / N
    var = np.maximum(total_sq / N - mean * mean, 0.0) * N / (N - 1)
    trace_var = max(trace_sq / N - (trace_sum / N) ** 2, 0.0) * N / (N - 1)
    return MeanFieldEstimate(SymmetricMatrix(mean), np.sqrt(var / N), N, math.sqrt(trace_var / N))


def estimate_g(theta: float, target: TargetModel, spec: ProposalSpec, v, N: int, rng: RngStream,
               shard_size: int = DEFAULT_SHARD_SIZE, workers: int = 1) -> ScalarEstimate:
    """E[min{1, π(x + rθv)/π(x)}] for x ~ π and r distributed as ‖U‖"""
    if not theta > 0:
        raise ValueError("theta must be positive")
    _require_sampler(target)
    _check_samples(N)
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError("Direction must be a unit vector")

    def shard(shard_rng, count):
        X = target.sample(shard_rng, count)
        r = sample_radii(spec, target.dim, shard_rng, count)
        a = _acceptance_batch(target, X, X + theta * r[:, None] * v)
        return a.sum(), (a * a).sum()

    parts = _map_shards(shard, N, rng, shard_size, workers)
    s = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s / N
    var = max(s2 / N - mean * mean, 0.0) * N / (N - 1)
    return ScalarEstimate(float(mean), math.sqrt(var / N), N)


def find_scale_fixed_point(target: TargetModel, spec: ProposalSpec, alpha_star: float, tol: float,
                           rng: RngStream, N: int = DEFAULT_SHARD_SIZE,
                           bracket: Tuple[float, float] = (1e-6, 1e6)) -> float:
    """
    θ* > 0 where the mean field at θ·I changes sign.

    Every evaluation reuses the same random numbers, so the estimated
    trace is a monotone step function of θ and bisection is well defined.
    """
    lowest, highest = bracket

    def trace_at(theta):
        S = LowerTriangularFactor.identity(target.dim, theta)
        return estimate_mean_field(S, target, spec, N, rng, alpha_star).trace()

    lo = hi = 1.0
    f = trace_at(1.0)
    if f == 0.0:
        return 1.0
    if f > 0:
        while f > 0:
            lo = hi
            hi *= 10.0
            if hi > highest:
                raise NoSignChange(f"Mean field stays positive up to θ = {highest:g}")
            f = trace_at(hi)
    else:
        while f < 0:
            hi = lo
            lo /= 10.0
            if lo < lowest:
                raise NoSignChange(f"Mean field stays negative down to θ = {lowest:g}")
            f = trace_at(lo)

    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = math.sqrt(lo * hi) if hi > 4.0 * lo else 0.5 * (lo + hi)
        f = trace_at(mid)
        if f == 0.0:
            return mid
        if f > 0:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    logger.info("Scale fixed point θ* ≈ %.6g (bracket width %.2g)", theta, hi - lo)
    return theta


def lyapunov_value(R: SymmetricMatrix, Rstar: SymmetricMatrix) -> float:
    """w(R) = tr(R*⁻¹R) − log(det R / det R*) − d"""
    L = cholesky_factorize(R).entries
    Ls = cholesky_factorize(Rstar).entries
    W = solve_triangular(Ls, L, lower=True)
    log_ratio = 2.0 * (np.sum(np.log(np.diag(L))) - np.sum(np.log(np.diag(Ls))))
    return max(float(np.sum(W * W)) - log_ratio - R.dim, 0.0)


def descent_inner_product(S: LowerTriangularFactor, Rstar: SymmetricMatrix, target: TargetModel,
                          spec: ProposalSpec, N: int, rng: RngStream, alpha_star: float = 0.234,
                          shard_size: int = DEFAULT_SHARD_SIZE, workers: int = 1) -> ScalarEstimate:
    """⟨∇w(SSᵀ), h_π(S)⟩ with ∇w(R) = R*⁻¹ − R⁻¹"""
    _require_sampler(target)
    _check_samples(N)
    eye = np.eye(target.dim)
    G = cho_solve((cholesky_factorize(Rstar).entries, True), eye) - cho_solve((S.entries, True), eye)
    G = 0.5 * (G + G.T)

    def shard(shard_rng, count):
        w, Z = _mean_field_terms(S, target, spec, alpha_star, shard_rng, count)
        t = w * np.einsum('ni,ij,nj->n', Z, G, Z)
        return t.sum(), (t * t).sum()

    parts = _map_shards(shard, N, rng, shard_size, workers)
    s = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s / N
    var = max(s2 / N - mean * mean, 0.0) * N / (N - 1)
    return ScalarEstimate(float(mean), math.sqrt(var / N), N)


def suboptimality_b(R: SymmetricMatrix, Sigma: SymmetricMatrix) -> float:
    """b = d(Σλᵢ⁻²)(Σλᵢ⁻¹)⁻² over λᵢ² = eigenvalues of Σ^(-1/2)·R·Σ^(-1/2)"""
    W = symmetric_power(Sigma, -0.5).entries
    eig = np.array(symmetric_eigenvalues(SymmetricMatrix(W @ R.entries @ W)))
    if eig[0] <= 0.0:
        raise NotPositiveDefinite(0, "R is not positive definite")
    lam = np.sqrt(eig)
    return float(R.dim * np.sum(lam ** -2.0) / np.sum(lam ** -1.0) ** 2)


def hpd_outside_fraction(samples, target: TargetModel, threshold: float) -> float:
    """Share of samples with (x−μ)ᵀΣ⁻¹(x−μ) > threshold"""
    X = np.asarray(samples, dtype=np.float64)
    if X.size == 0:
        raise EmptyInput("No samples given")
    X = X.reshape(-1, target.dim)
    return float(np.mean(hpd_quadratic(target, X) > threshold))


@dataclass
class ErrorTable:
    """RMSE per tracked statistic and per group, multiplied by `scale`"""
    per_statistic: Dict[str, float]
    per_group: Dict[str, float]
    replications: int
    scale: float = 1.0

    def to_dict(self) -> dict:
        return {
            'per_statistic': dict(sorted(self.per_statistic.items())),
            'per_group': dict(sorted(self.per_group.items())),
            'replications': self.replications,
            'scale': self.scale,
        }


def rmse_report(replication_summaries: Sequence[Union[ChainSummary, Mapping[str, float]]],
                truths: Mapping[str, float],
                groups: Optional[Mapping[str, Iterable[str]]] = None,
                scale: float = 1.0) -> ErrorTable:
    """Root-mean-square error of tracked statistics against known truths across replications"""
    if len(replication_summaries) < 2:
        raise EmptyInput(f"Need at least 2 replications, got {len(replication_summaries)}")
    if not truths:
        raise EmptyInput("No truths given")

    rows = [s.tracked_statistics() if isinstance(s, ChainSummary) else dict(s) for s in replication_summaries]
    errors: Dict[str, np.ndarray] = {}
    for name, truth in truths.items():
        try:
            errors[name] = np.array([row[name] for row in rows]) - truth
        except KeyError:
            raise ValueError(f"Statistic '{name}' missing from a replication summary")

    per_statistic = {name: scale * float(np.sqrt(np.mean(e ** 2))) for name, e in errors.items()}
    per_group = {}
    for group, names in (groups or {}).items():
        stacked = np.concatenate([errors[name] for name in names])
        per_group[group] = scale * float(np.sqrt(np.mean(stacked ** 2)))
    return ErrorTable(per_statistic, per_group, len(rows), scale)
