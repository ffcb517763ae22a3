"""
Analytic energies with closed-form Boltzmann densities.
"""
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from ..errors import ShapeError
from .base import EnergyModel, EnergyRecord


class ZeroEnergy(EnergyModel):
    """U(x) = 0"""

    def __init__(self, dim: Optional[int] = None):
        self._dim = dim

    @property
    def dim(self) -> Optional[int]:
        return self._dim

    def energy(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(x.shape[0])

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        return np.zeros_like(x)

    def to_record(self) -> EnergyRecord:
        return {"kind": "zero", "dim": self._dim}, {}


class QuadraticEnergy(EnergyModel):
    """U(x) = ||x||^2 / 2, the standard normal"""

    def __init__(self, dim: Optional[int] = None):
        self._dim = dim

    @property
    def dim(self) -> Optional[int]:
        return self._dim

    def energy(self, x: np.ndarray) -> np.ndarray:
        return 0.5 * np.sum(x * x, axis=1)

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        return x.copy()

    def to_record(self) -> EnergyRecord:
        return {"kind": "quadratic", "dim": self._dim}, {}


class DoubleWellEnergy(EnergyModel):
    """U(x) = sum_i (x_i^2 - 1)^2 / 4, minima at every x_i = +-1"""

    def __init__(self, dim: Optional[int] = None):
        self._dim = dim

    @property
    def dim(self) -> Optional[int]:
        return self._dim

    def energy(self, x: np.ndarray) -> np.ndarray:
        s = x * x - 1.0
        return 0.25 * np.sum(s * s, axis=1)

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        return x * (x * x - 1.0)

    def to_record(self) -> EnergyRecord:
        return {"kind": "double-well", "dim": self._dim}, {}


class GaussianMixtureEnergy(EnergyModel):
    """
    U(x) = -log sum_k w_k N(x; mu_k, Sigma_k), an exactly normalized density.
    """

    def __init__(self, weights: Sequence[float], means: np.ndarray, covariances: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        covariances = np.asarray(covariances, dtype=np.float64)
        n_comp, d = means.shape
        if covariances.ndim == 1:
            # per-component isotropic variances
            covariances = covariances[:, None, None] * np.eye(d)[None]
        if weights.shape != (n_comp,) or covariances.shape != (n_comp, d, d):
            raise ShapeError("mixture weights, means and covariances disagree on component count")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")

        self.weights = weights
        self.means = means
        self.covariances = covariances
        chol = np.linalg.cholesky(covariances)  # raises LinAlgError unless SPD
        self._precisions = np.linalg.inv(covariances)
        log_dets = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        self._log_norms = np.log(weights) - 0.5 * (d * np.log(2.0 * np.pi) + log_dets)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _component_logits(self, x: np.ndarray):
        diff = x[:, None, :] - self.means[None, :, :]  # (B, K, d)
        prec_diff = np.einsum("kij,bkj->bki", self._precisions, diff)
        maha = np.sum(diff * prec_diff, axis=2)
        return self._log_norms[None, :] - 0.5 * maha, prec_diff

    def energy(self, x: np.ndarray) -> np.ndarray:
        logits, _ = self._component_logits(x)
        return -logsumexp(logits, axis=1)

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        logits, prec_diff = self._component_logits(x)
        resp = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        return np.einsum("bk,bki->bi", resp, prec_diff)

    def to_record(self) -> EnergyRecord:
        return {"kind": "mixture"}, {
            "weights": self.weights,
            "means": self.means,
            "covariances": self.covariances,
        }
