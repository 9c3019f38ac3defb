"""
Spherically symmetric proposal increments and reproducible RNG streams.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

GAUSSIAN = 'gaussian'
STUDENT = 'student'


@dataclass(frozen=True)
class ProposalSpec:
    """Proposal family: standard Gaussian or Student q(z) ∝ (1+‖z‖²)^(-(d+p)/2)"""
    kind: str = STUDENT
    p: Optional[float] = 1.0

    def __post_init__(self):
        if self.kind == GAUSSIAN:
            object.__setattr__(self, 'p', None)
        elif self.kind == STUDENT:
            if self.p is None or not self.p > 0:
                raise ValueError(f"Student proposal needs p > 0, got {self.p}")
            object.__setattr__(self, 'p', float(self.p))
        else:
            raise ValueError(f"Unknown proposal kind: {self.kind}")

    @classmethod
    def gaussian(cls) -> "ProposalSpec":
        return cls(GAUSSIAN, None)

    @classmethod
    def student(cls, p: float = 1.0) -> "ProposalSpec":
        return cls(STUDENT, p)

    @classmethod
    def parse(cls, text: str) -> "ProposalSpec":
        """Parse `gaussian` or `student:<p>` (bare `student` means p = 1)"""
        name, _, arg = text.strip().lower().partition(':')
        if name == GAUSSIAN and not arg:
            return cls.gaussian()
        if name == STUDENT:
            try:
                return cls.student(float(arg) if arg else 1.0)
            except ValueError:
                raise ValueError(f"Invalid Student exponent in '{text}'")
        raise ValueError(f"Unknown proposal '{text}' (expected gaussian or student:<p>)")

    def __str__(self) -> str:
        return GAUSSIAN if self.kind == GAUSSIAN else f"{STUDENT}:{self.p:g}"


@dataclass
class RngStream:
    """
    Counter-based (Philox) generator keyed by (seed, stream id).

    Identical keys give bit-identical sequences on every platform, so a
    replication can be rerun on its own without replaying the others.
    """
    seed: int
    stream_id: int = 0
    substream: Optional[int] = None
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("Seed and stream id must be non-negative")
        key = (self.stream_id,) if self.substream is None else (self.stream_id, self.substream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=key)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def reset(self) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.substream)

    def shard(self, index: int) -> "RngStream":
        """Independent child stream for shard `index` of a parallel estimator"""
        return RngStream(self.seed, self.stream_id, index)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def chisquare(self, df: float, size=None):
        return self.generator.chisquare(df, size)

    def uniform(self, size=None):
        return self.generator.random(size)


def sample_increment(spec: ProposalSpec, dim: int, rng: RngStream) -> np.ndarray:
    """One draw U ~ q in R^dim"""
    g = rng.standard_normal(dim)
    if spec.kind == GAUSSIAN:
        return g
    # g/√G with G ~ χ²(p) has density ∝ (1+‖z‖²)^(-(d+p)/2)
    return g / np.sqrt(rng.chisquare(spec.p))


def sample_increments(spec: ProposalSpec, dim: int, rng: RngStream, count: int) -> np.ndarray:
    """`count` independent increments as rows of a (count, dim) array"""
    g = rng.standard_normal((count, dim))
    if spec.kind == GAUSSIAN:
        return g
    return g / np.sqrt(rng.chisquare(spec.p, count))[:, None]


def sample_radius(spec: ProposalSpec, dim: int, rng: RngStream) -> float:
    """‖U‖ for U ~ q"""
    return float(np.linalg.norm(sample_increment(spec, dim, rng)))


def sample_radii(spec: ProposalSpec, dim: int, rng: RngStream, count: int) -> np.ndarray:
    return np.linalg.norm(sample_increments(spec, dim, rng, count), axis=1)
