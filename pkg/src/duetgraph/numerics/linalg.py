from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError, ShapeError, Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    iterations: int
    converged: bool

    def __float__(self) -> float:
        return self.value


def spectral_norm(m, max_iters: int = 20000, tol: float = 1e-12, seed: int = 0) -> SpectralEstimate:
    """Largest singular value by power iteration on M^T M.

    Stops when the eigen-residual ||M^T M v - lambda v|| drops below
    ``tol * lambda``; for the symmetric M^T M this bounds the relative
    error of lambda, and hence of sigma, by ``tol``.
    """
    a = m.data if isinstance(m, Tensor) else np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or min(a.shape) < 1:
        raise ShapeError(f"spectral_norm needs a non-empty matrix, got {a.shape}")
    if tol <= 0:
        raise ContractError("tol must be positive")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iters + 1):
        w = a.T @ (a @ v)
        lam = float(v @ w)
        wn = np.linalg.norm(w)
        if wn == 0.0:
            return SpectralEstimate(0.0, it, True)
        if np.linalg.norm(w - lam * v) <= tol * lam:
            return SpectralEstimate(float(np.sqrt(max(lam, 0.0))), it, True)
        v = w / wn
    logger.warning("power iteration did not converge in %d iterations", max_iters)
    return SpectralEstimate(float(np.sqrt(max(lam, 0.0))), max_iters, False)
