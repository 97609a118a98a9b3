"""Dense positive-definite linear algebra: jittered Cholesky, triangular solves, trace forms."""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

# multiples of the mean diagonal, tried after an unjittered attempt
DEFAULT_JITTER_LADDER = (1e-12, 1e-10, 1e-8, 1e-6)


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, message, jitter):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class CholFactor:
    """Lower factor ``L`` with ``L @ L.T == A + jitter * I``."""

    L: np.ndarray
    jitter: float = 0.0

    @property
    def n(self):
        return self.L.shape[0]


def cholesky_psd(A, jitter_ladder=DEFAULT_JITTER_LADDER):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = float(np.mean(np.diag(A))) if A.size else 1.0
    if not scale > 0:
        scale = 1.0
    rungs = [0.0] + [r * scale for r in jitter_ladder]
    eye = np.eye(A.shape[0])
    for jitter in rungs:
        try:
            L = np.linalg.cholesky(A + jitter * eye if jitter else A)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return CholFactor(L, jitter)
    raise SingularMatrixError(
        f"Cholesky failed on every jitter rung (last jitter {rungs[-1]:.3g})", rungs[-1]
    )


def solve_chol(factor, B):
    """``A^{-1} B`` from two triangular solves."""
    z = solve_triangular(factor.L, B, lower=True, check_finite=False)
    return solve_triangular(factor.L, z, lower=True, trans="T", check_finite=False)


def trace_quad(V, K):
    """``trace(V^T K V)`` without forming the m x m product."""
    return float(np.sum(V * (K @ V)))
