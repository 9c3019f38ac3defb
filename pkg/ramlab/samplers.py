"""
Random-walk Metropolis with RAM, AM, ASWAM and ASM adaptation.

A chain starts at X₁ = x₁ with factor S₁ = s₁. Step k proposes
Y = X + S·U, accepts with probability α, and then adapts using the
step size η at chain index n = k + 1.
"""

import csv
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_triangular
from tqdm import tqdm

from .analysis import ChainSummary, suboptimality_b
from .errors import ConfigError, DimensionMismatch, DowndateFailure, RamLabError, StepError, ValidationError
from .linalg import (LowerTriangularFactor, SymmetricMatrix, cholesky_factorize, rank_one_update,
                     relative_frobenius_error, symmetric_eigenvalues)
from .proposals import ProposalSpec, RngStream, sample_increment
from .targets import TargetModel, acceptance_from_logs, affine_image, hpd_threshold

logger = logging.getLogger(__name__)

AM_SCALE = 2.4


class Algorithm(str, Enum):
    RWM = 'rwm'
    RAM = 'ram'
    AM = 'am'
    ASWAM = 'aswam'
    ASM = 'asm'

    @property
    def stream_index(self) -> int:
        """Fixed per-algorithm offset used to key RNG streams"""
        return list(Algorithm).index(self)


@dataclass(frozen=True)
class AdaptationSchedule:
    """η_n = n^(-γ), optionally min{1, d·n^(-γ)}"""
    gamma: float = 2.0 / 3.0
    dimension_scaled: bool = False

    def __post_init__(self):
        if not 0.5 < self.gamma <= 1.0:
            raise ValueError(f"Step size exponent must lie in (1/2, 1], got {self.gamma}")


def step_size(schedule: AdaptationSchedule, n: int, dim: int) -> float:
    if n < 1:
        raise ValueError("Step index starts at 1")
    eta = float(n) ** (-schedule.gamma)
    if schedule.dimension_scaled:
        eta = dim * eta
    return min(1.0, eta)


@dataclass
class SamplerConfig:
    algorithm: Algorithm
    initial_factor: LowerTriangularFactor
    initial_point: np.ndarray
    alpha_star: float = 0.234
    schedule: AdaptationSchedule = field(default_factory=AdaptationSchedule)
    covariance_schedule: Optional[AdaptationSchedule] = None
    eigen_bounds: Optional[Tuple[float, float]] = None
    am_regularization: float = 0.0
    burn_in: int = 0
    iterations: int = 1000
    proposal: ProposalSpec = field(default_factory=ProposalSpec.student)
    checkpoint_every: int = 1000
    hpd_levels: Sequence[float] = ()
    track_suboptimality: bool = False

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        self.initial_point = np.array(self.initial_point, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.initial_factor.dim

    @property
    def cov_schedule(self) -> AdaptationSchedule:
        return self.covariance_schedule or self.schedule

    def validate(self, target: TargetModel) -> None:
        """Check every invariant, reporting all violations together"""
        errors = []
        if not 0.0 < self.alpha_star < 1.0:
            errors.append(f"alpha_star must lie in (0, 1), got {self.alpha_star}")
        if self.iterations < 1:
            errors.append("iterations must be positive; a summary over zero samples is undefined")
        if self.burn_in < 0:
            errors.append("burn_in must be non-negative")
        if self.checkpoint_every < 1:
            errors.append("checkpoint_every must be positive")
        if self.am_regularization < 0:
            errors.append("am_regularization must be non-negative")
        if self.initial_factor.dim != target.dim:
            errors.append(f"initial factor is {self.initial_factor.dim}-dimensional, target is {target.dim}")
        if self.initial_point.shape != (target.dim,):
            errors.append(f"initial point has shape {self.initial_point.shape}, target is {target.dim}-dimensional")
        for level in self.hpd_levels:
            if not 0.0 < level < 1.0:
                errors.append(f"HPD level {level} outside (0, 1)")
        if self.track_suboptimality and target.metadata is None:
            errors.append("suboptimality tracking needs a target with known shape")
        if self.eigen_bounds is not None:
            lo, hi = self.eigen_bounds
            if not 0.0 < lo <= hi < math.inf:
                errors.append(f"eigen bounds must satisfy 0 < lo <= hi < inf, got {self.eigen_bounds}")
            elif self.initial_factor.dim == target.dim:
                eig = symmetric_eigenvalues(self.initial_factor.gram())
                if eig[0] < lo or eig[-1] > hi:
                    errors.append(f"eigenvalues of s1·s1ᵀ [{eig[0]:.4g}, {eig[-1]:.4g}] outside bounds [{lo}, {hi}]")
            if self.algorithm != Algorithm.RAM:
                logger.warning("Eigen bounds only apply to RAM; ignored for %s", self.algorithm.value)
        if errors:
            raise ValidationError(errors)

        if self.algorithm == Algorithm.RAM and self.schedule.gamma >= 1.0:
            logger.warning("RAM with step sizes n^-1 adapts very slowly when s1 is badly scaled")


@dataclass
class ChainState:
    n: int
    x: np.ndarray
    log_density: float
    factor: LowerTriangularFactor
    am_mean: Optional[np.ndarray] = None
    am_cov: Optional[np.ndarray] = None
    log_scale: float = 0.0
    accept_count: int = 0
    last_alpha: float = math.nan


@dataclass(frozen=True)
class IterationRecord:
    n: int
    x: np.ndarray
    alpha: float
    accepted: bool
    factor_diagonal: np.ndarray


@dataclass(frozen=True)
class StepResult:
    proposal: np.ndarray
    increment: np.ndarray
    alpha: float
    accepted: bool
    x: np.ndarray
    log_density: float
    uniform: float


def metropolis_step(state: ChainState, target: TargetModel, spec: ProposalSpec, rng: RngStream,
                    increment: Optional[np.ndarray] = None, uniform: Optional[float] = None) -> StepResult:
    """
    One random-walk Metropolis transition from state.x with factor state.factor.

    The increment and the uniform are always drawn in that order so runs
    stay bit-reproducible; `increment`/`uniform` override the draws for
    coupled chains.
    """
    dim = state.factor.dim
    u = sample_increment(spec, dim, rng)
    w = rng.uniform()
    if increment is not None:
        u = np.asarray(increment, dtype=np.float64)
        if u.shape != (dim,):
            raise DimensionMismatch(dim, u.size, "increment")
    if uniform is not None:
        w = float(uniform)

    y = state.x + state.factor.entries @ u
    log_y = target.log_density(y)
    alpha = acceptance_from_logs(log_y, state.log_density)
    accepted = alpha > 0.0 and w <= alpha
    if accepted:
        return StepResult(y, u, alpha, True, y, log_y, w)
    return StepResult(y, u, alpha, False, state.x, state.log_density, w)


def _check_adapt_args(alpha: float, eta: float, alpha_star: float) -> None:
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"Step size must lie in (0, 1], got {eta}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"Acceptance probability must lie in [0, 1], got {alpha}")
    if not 0.0 < alpha_star < 1.0:
        raise ValueError(f"Target acceptance must lie in (0, 1), got {alpha_star}")


def ram_adapt(S: LowerTriangularFactor, u, alpha: float, eta: float, alpha_star: float) -> LowerTriangularFactor:
    """S' with S'S'ᵀ = S(I + η(α−α*)uuᵀ/‖u‖²)Sᵀ"""
    _check_adapt_args(alpha, eta, alpha_star)
    u = np.asarray(u, dtype=np.float64)
    norm_u = float(np.linalg.norm(u))
    if norm_u == 0.0:
        logger.debug("Zero increment; factor left unchanged")
        return S
    a = eta * (alpha - alpha_star)
    if a == 0.0:
        return S

    v = S.entries @ u / norm_u
    try:
        return rank_one_update(S, v, a)
    except DowndateFailure:
        logger.debug("Downdate failed (a=%.4g); refactorizing explicitly", a)
        return cholesky_factorize(SymmetricMatrix(S.entries @ S.entries.T + a * np.outer(v, v)))


def ram_adapt_bounded(S: LowerTriangularFactor, u, alpha: float, eta: float, alpha_star: float,
                      lam_min: float, lam_max: float) -> LowerTriangularFactor:
    """RAM step kept only if every eigenvalue of S'S'ᵀ stays in [lam_min, lam_max]"""
    if not 0.0 < lam_min <= lam_max:
        raise ValueError("Eigen bounds must satisfy 0 < lam_min <= lam_max")
    candidate = ram_adapt(S, u, alpha, eta, alpha_star)
    if candidate is S:
        return S
    eig = symmetric_eigenvalues(candidate.gram())
    if eig[0] < lam_min or eig[-1] > lam_max:
        logger.debug("Candidate spectrum [%.4g, %.4g] outside bounds; keeping factor", eig[0], eig[-1])
        return S
    return candidate


def am_adapt(state: ChainState, new_x, eta: float, epsilon: float,
             dim: int) -> Tuple[np.ndarray, np.ndarray, LowerTriangularFactor]:
    """Exponentially weighted mean/covariance step and the AM factor (2.4/√d)·chol(cov + εI)"""
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"Step size must lie in (0, 1], got {eta}")
    new_x = np.asarray(new_x, dtype=np.float64)
    mean = state.am_mean + eta * (new_x - state.am_mean)
    centered = new_x - mean
    cov = state.am_cov + eta * (np.outer(centered, centered) - state.am_cov)
    cov = 0.5 * (cov + cov.T)
    factor = cholesky_factorize(SymmetricMatrix(cov + epsilon * np.eye(dim)))
    return mean, cov, factor.scaled(AM_SCALE / math.sqrt(dim))


def scale_adapt(log_theta: float, alpha: float, eta: float, alpha_star: float) -> float:
    """log θ' = log θ + (η/2)(α − α*)"""
    return log_theta + 0.5 * eta * (alpha - alpha_star)


def initial_state(config: SamplerConfig, target: TargetModel) -> ChainState:
    x1 = config.initial_point.copy()
    log_x1 = target.log_density(x1)
    if log_x1 == -math.inf:
        raise ConfigError("Initial point lies outside the support of the target")

    dim = target.dim
    state = ChainState(n=1, x=x1, log_density=log_x1, factor=config.initial_factor)
    if config.algorithm in (Algorithm.AM, Algorithm.ASWAM):
        state.am_mean = x1.copy()
        state.am_cov = (dim / AM_SCALE ** 2) * (config.initial_factor.entries @ config.initial_factor.entries.T)
    if config.algorithm == Algorithm.ASWAM:
        state.log_scale = math.log(AM_SCALE / math.sqrt(dim))
    return state


def adapt_state(state: ChainState, config: SamplerConfig, step: StepResult) -> None:
    """Apply the configured adaptation rule for chain index state.n"""
    algorithm = config.algorithm
    if algorithm == Algorithm.RWM:
        return

    dim = state.factor.dim
    n = state.n
    if algorithm == Algorithm.RAM:
        eta = step_size(config.schedule, n, dim)
        if config.eigen_bounds is not None:
            lo, hi = config.eigen_bounds
            state.factor = ram_adapt_bounded(state.factor, step.increment, step.alpha, eta, config.alpha_star, lo, hi)
        else:
            state.factor = ram_adapt(state.factor, step.increment, step.alpha, eta, config.alpha_star)
    elif algorithm == Algorithm.ASM:
        eta = step_size(config.schedule, n, dim)
        state.log_scale = scale_adapt(state.log_scale, step.alpha, eta, config.alpha_star)
        state.factor = config.initial_factor.scaled(math.exp(state.log_scale))
    else:
        eta_cov = step_size(config.cov_schedule, n, dim)
        state.am_mean, state.am_cov, am_factor = am_adapt(state, state.x, eta_cov, config.am_regularization, dim)
        if algorithm == Algorithm.AM:
            state.factor = am_factor
        else:
            eta = step_size(config.schedule, n, dim)
            state.log_scale = scale_adapt(state.log_scale, step.alpha, eta, config.alpha_star)
            state.factor = am_factor.scaled(math.exp(state.log_scale) * math.sqrt(dim) / AM_SCALE)


def advance(state: ChainState, config: SamplerConfig, target: TargetModel, rng: RngStream,
            increment: Optional[np.ndarray] = None, uniform: Optional[float] = None) -> StepResult:
    """Metropolis transition followed by adaptation; mutates `state`"""
    step = metropolis_step(state, target, config.proposal, rng, increment, uniform)
    state.n += 1
    state.x = step.x
    state.log_density = step.log_density
    state.last_alpha = step.alpha
    if step.accepted:
        state.accept_count += 1
    adapt_state(state, config, step)
    return step


def run_chain(config: SamplerConfig, target: TargetModel, rng: RngStream,
              sink: Optional[Callable[[IterationRecord], None]] = None,
              progress: bool = False) -> ChainSummary:
    """
    Run burn_in + iterations steps with adaptation from the first step.

    Summary statistics use the post-burn-in states only; the checkpoint
    trajectories (log S₁₁ and, when tracked, b) cover the whole run.
    """
    config.validate(target)
    state = initial_state(config, target)
    dim = target.dim
    total = config.burn_in + config.iterations

    levels = sorted(config.hpd_levels)
    thresholds = np.array([hpd_threshold(target, level) for level in levels])
    form = target.hpd_form() if levels else None
    shape = target.metadata.true_shape if config.track_suboptimality else None

    coordinate_sums = np.zeros(dim)
    inside_counts = np.zeros(len(levels), dtype=np.int64)
    accepted_post = 0
    alpha_sum = 0.0
    log_diag_trajectory: List[Tuple[int, float]] = []
    b_trajectory: List[Tuple[int, float]] = []

    logger.info("Starting %s chain: d=%d, %d burn-in + %d iterations",
                config.algorithm.value, dim, config.burn_in, config.iterations)
    steps = tqdm(range(1, total + 1), disable=not progress, file=sys.stderr,
                 mininterval=1.0, leave=False, desc=config.algorithm.value)
    for k in steps:
        try:
            step = advance(state, config, target, rng)
        except (RamLabError, ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            raise StepError(k, e) from e

        if sink is not None:
            sink(IterationRecord(k, state.x, step.alpha, step.accepted, state.factor.diagonal()))

        if k > config.burn_in:
            coordinate_sums += state.x
            accepted_post += step.accepted
            alpha_sum += step.alpha
            if form is not None:
                inside_counts += form(state.x) <= thresholds

        if k % config.checkpoint_every == 0:
            log_diag_trajectory.append((k, math.log(state.factor.entries[0, 0])))
            if shape is not None:
                b_trajectory.append((k, suboptimality_b(state.factor.gram(), shape)))

    m = config.iterations
    inside = {level: float(c) / m for level, c in zip(levels, inside_counts)}
    summary = ChainSummary(
        algorithm=config.algorithm.value,
        acceptance_rate=accepted_post / m,
        coordinate_means=coordinate_sums / m,
        factor_final=state.factor,
        hpd_outside_fraction=(1.0 - inside[levels[-1]]) if levels else None,
        hpd_inside_fractions=inside,
        b_trajectory=b_trajectory,
        log_diag_trajectory=log_diag_trajectory,
        mean_alpha=alpha_sum / m,
        burn_in=config.burn_in,
        iterations=m,
    )
    logger.info("Finished %s chain: acceptance rate %.4f", config.algorithm.value, summary.acceptance_rate)
    return summary


@dataclass(frozen=True)
class CouplingReport:
    steps: int
    max_point_error: float
    max_factor_error: float
    accepted: int
    image_accepted: int

    def to_dict(self) -> dict:
        return {
            'steps': self.steps,
            'max_point_error': self.max_point_error,
            'max_factor_error': self.max_factor_error,
            'accepted': self.accepted,
            'image_accepted': self.image_accepted,
        }


def coupled_affine_run(config: SamplerConfig, target: TargetModel, A, b, steps: int,
                       rng: RngStream) -> CouplingReport:
    """
    Drive a chain on π and one on its image x ↦ Ax + b with shared randomness.

    The image chain starts at (A·x₁ + b, chol(A·s₁s₁ᵀ·Aᵀ)) and reuses each
    uniform; its increment is Q·U with the orthogonal Q = Ŝ⁻¹·A·S. Errors
    are relative: ‖A·X + b − X̂‖ / max(1, ‖X̂‖) and the Frobenius distance
    between (AS)(AS)ᵀ and ŜŜᵀ.
    """
    if steps < 1:
        raise ValueError("Coupled run needs at least one step")
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    image = affine_image(target, A, b)
    s1 = config.initial_factor.entries
    image_config = replace(
        config,
        initial_factor=cholesky_factorize(SymmetricMatrix(A @ s1 @ s1.T @ A.T)),
        initial_point=A @ config.initial_point + b,
    )
    config.validate(target)
    image_config.validate(image)

    state = initial_state(config, target)
    image_state = initial_state(image_config, image)
    image_rng = rng.shard(0)
    point_error = factor_error = 0.0
    for k in range(1, steps + 1):
        AS = A @ state.factor.entries
        Q = solve_triangular(image_state.factor.entries, AS, lower=True)
        try:
            step = advance(state, config, target, rng)
            advance(image_state, image_config, image, image_rng, increment=Q @ step.increment, uniform=step.uniform)
        except (RamLabError, ValueError, np.linalg.LinAlgError) as e:
            raise StepError(k, e) from e

        mapped = A @ state.x + b
        point_error = max(point_error, float(np.linalg.norm(mapped - image_state.x))
                          / max(1.0, float(np.linalg.norm(image_state.x))))
        AS = A @ state.factor.entries
        factor_error = max(factor_error, relative_frobenius_error(image_state.factor.gram(),
                                                                   SymmetricMatrix(AS @ AS.T)))

    logger.info("Coupled %d steps: point error %.3g, factor error %.3g", steps, point_error, factor_error)
    return CouplingReport(steps, point_error, factor_error, state.accept_count, image_state.accept_count)


class CsvRecordSink:
    """Writes every `thinning`-th record as `n, accepted, alpha, x_1..x_d, sdiag_1..sdiag_d`"""

    def __init__(self, path, dim: int, thinning: int = 10):
        if thinning < 1:
            raise ValueError("Thinning must be positive")
        self.path = Path(path)
        self.thinning = thinning
        self._file = open(self.path, 'w', newline='', encoding='utf-8')
        self._writer = csv.writer(self._file)
        self._writer.writerow(['n', 'accepted', 'alpha']
                              + [f"x_{i}" for i in range(1, dim + 1)]
                              + [f"sdiag_{i}" for i in range(1, dim + 1)])

    def __call__(self, record: IterationRecord) -> None:
        if record.n % self.thinning:
            return
        self._writer.writerow([record.n, int(record.accepted), float(record.alpha)]
                              + record.x.tolist() + record.factor_diagonal.tolist())

    def close(self) -> None:
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_chain_csv(path) -> Dict[str, np.ndarray]:
    """Columns of a chain file written by CsvRecordSink"""
    data = np.genfromtxt(path, delimiter=',', names=True)
    data = np.atleast_1d(data)
    return {name: np.asarray(data[name]) for name in data.dtype.names}
