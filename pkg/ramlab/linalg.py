"""
Dense symmetric/triangular kernels used by the adaptation rules.

Cholesky factors are stored lower triangular with a positive diagonal.
The rank-one up/downdate and the cyclic Jacobi eigensolver are small
loops compiled with numba when it is available.
"""

import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.linalg import lapack

from .errors import DimensionMismatch, DowndateFailure, NoConvergence, NotPositiveDefinite

logger = logging.getLogger(__name__)

# Numba acceleration (optional)
try:
    from numba import njit
except ImportError:
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


PIVOT_TOLERANCE = 1e-14
UNIT_TOLERANCE = 1e-12
JACOBI_MAX_DIM = 64
JACOBI_SWEEPS_PER_DIM = 100


@dataclass(frozen=True, eq=False)
class SymmetricMatrix:
    """Square matrix stored symmetric by construction"""
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"Expected a non-empty square matrix, got shape {a.shape}")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, 'entries', a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "SymmetricMatrix":
        return cls(scale * np.eye(dim))

    @classmethod
    def diagonal(cls, values) -> "SymmetricMatrix":
        return cls(np.diag(np.asarray(values, dtype=np.float64)))

    def trace(self) -> float:
        return float(np.trace(self.entries))


@dataclass(frozen=True, eq=False)
class LowerTriangularFactor:
    """Lower triangular matrix with strictly positive diagonal"""
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"Expected a non-empty square matrix, got shape {a.shape}")
        if np.any(np.triu(a, 1) != 0.0):
            raise ValueError("Factor has non-zero entries above the diagonal")
        if not np.all(np.diag(a) > 0.0):
            raise ValueError("Factor diagonal must be strictly positive")
        a.setflags(write=False)
        object.__setattr__(self, 'entries', a)

    @classmethod
    def _trusted(cls, a: np.ndarray) -> "LowerTriangularFactor":
        # Skips validation; only for arrays produced by the kernels below.
        obj = object.__new__(cls)
        a.setflags(write=False)
        object.__setattr__(obj, 'entries', a)
        return obj

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "LowerTriangularFactor":
        return cls(scale * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def diagonal(self) -> np.ndarray:
        return np.diag(self.entries).copy()

    def scaled(self, c: float) -> "LowerTriangularFactor":
        if c <= 0:
            raise ValueError("Scale must be positive")
        return LowerTriangularFactor._trusted(c * self.entries)

    def gram(self) -> SymmetricMatrix:
        """L·Lᵀ"""
        return SymmetricMatrix(self.entries @ self.entries.T)


@njit
def _choldate_kernel(L, x, sign):
    n = L.shape[0]
    for k in range(n):
        lkk = L[k, k]
        r2 = lkk * lkk + sign * x[k] * x[k]
        if r2 <= PIVOT_TOLERANCE * lkk * lkk:
            return False
        r = math.sqrt(r2)
        c = r / lkk
        s = x[k] / lkk
        L[k, k] = r
        for i in range(k + 1, n):
            L[i, k] = (L[i, k] + sign * s * x[i]) / c
            x[i] = c * x[i] - s * L[i, k]
    return True


@njit
def _jacobi_kernel(A, max_sweeps, tol):
    n = A.shape[0]
    for _ in range(max_sweeps):
        off = 0.0
        total = 0.0
        for i in range(n):
            total += A[i, i] * A[i, i]
            for j in range(i + 1, n):
                off += 2.0 * A[i, j] * A[i, j]
        total += off
        if off <= tol * tol * total:
            return True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
    return False


def _as_array(M) -> np.ndarray:
    if isinstance(M, (SymmetricMatrix, LowerTriangularFactor)):
        return M.entries
    return np.asarray(M, dtype=np.float64)


def cholesky_factorize(M: SymmetricMatrix) -> LowerTriangularFactor:
    """Cholesky factor L with L·Lᵀ = M"""
    a = _as_array(M)
    max_diag = float(np.max(np.diag(a)))
    if not max_diag > 0.0:
        raise NotPositiveDefinite(int(np.argmax(np.diag(a) <= 0.0)))

    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:
        raise ValueError(f"Illegal argument to dpotrf (info={info})")

    pivots = np.diag(c) ** 2
    bad = np.nonzero(pivots <= PIVOT_TOLERANCE * max_diag)[0]
    if bad.size:
        raise NotPositiveDefinite(int(bad[0]))
    return LowerTriangularFactor._trusted(np.ascontiguousarray(c))


def rank_one_update(L: LowerTriangularFactor, v, a: float) -> LowerTriangularFactor:
    """
    Factor of L·Lᵀ + a·v·vᵀ by an O(d²) rotation sweep.

    Positive a is an update, negative a a hyperbolic downdate. Raises
    DowndateFailure when a pivot loses positivity; callers fall back to
    factorizing the explicit right-hand side.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (L.dim,):
        raise DimensionMismatch(L.dim, v.shape[0] if v.ndim == 1 else v.size)
    if a == 0.0:
        return L

    work = np.array(L.entries, dtype=np.float64, order='C')
    x = math.sqrt(abs(a)) * v
    sign = 1.0 if a > 0 else -1.0
    if not _choldate_kernel(work, x, sign):
        raise DowndateFailure(f"Downdate with a={a:.6g} lost positivity")
    return LowerTriangularFactor._trusted(work)


def symmetric_eigenvalues(M: SymmetricMatrix) -> List[float]:
    """All eigenvalues in ascending order (cyclic Jacobi up to 64×64, LAPACK beyond)"""
    a = _as_array(M)
    n = a.shape[0]
    if n == 1:
        return [float(a[0, 0])]
    if n > JACOBI_MAX_DIM:
        try:
            return [float(w) for w in np.linalg.eigvalsh(a)]
        except np.linalg.LinAlgError as e:
            raise NoConvergence(str(e)) from e

    work = np.array(a, dtype=np.float64, order='C')
    sweeps = JACOBI_SWEEPS_PER_DIM * n
    if not _jacobi_kernel(work, sweeps, 1e-13):
        raise NoConvergence(f"Jacobi sweeps did not converge within {sweeps} sweeps")
    return sorted(float(w) for w in np.diag(work))


def directional_radius(L: LowerTriangularFactor, v) -> float:
    """‖Lᵀv‖, the radius of the contour ellipsoid of L·Lᵀ along unit v"""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (L.dim,):
        raise DimensionMismatch(L.dim, v.size)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOLERANCE:
        raise ValueError("Direction must be a unit vector")
    return float(np.linalg.norm(L.entries.T @ v))


def symmetric_power(M: SymmetricMatrix, power: float) -> SymmetricMatrix:
    """M^power for positive definite M via its eigendecomposition"""
    w, V = np.linalg.eigh(_as_array(M))
    if np.any(w <= 0.0):
        raise NotPositiveDefinite(int(np.argmax(w <= 0.0)))
    return SymmetricMatrix((V * w ** power) @ V.T)


def relative_frobenius_error(A, B) -> float:
    a = _as_array(A)
    b = _as_array(B)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.finfo(float).tiny))
