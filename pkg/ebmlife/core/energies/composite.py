"""
Longrun energy: a trainable term plus a frozen prior energy and a Gaussian
confinement term, U(x) = U_active(x) + U_prior(x) + ||x||^2 / (2 sigma^2).
"""
from typing import List, Sequence

import numpy as np

from .base import EnergyModel, EnergyRecord


class CompositeEnergy(EnergyModel):
    """Trainable energy composed with a frozen prior; only `active` is ever updated"""

    def __init__(self, active: EnergyModel, prior: EnergyModel, sigma: float):
        if not sigma > 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        if active.dim is not None and prior.dim is not None and active.dim != prior.dim:
            raise ValueError("active and prior energies disagree on dimension")
        self.active = active
        self.prior = prior
        self.sigma = float(sigma)
        self.trainable = active.trainable

    @property
    def dim(self):
        return self.active.dim if self.active.dim is not None else self.prior.dim

    @property
    def params(self) -> List[np.ndarray]:
        return self.active.params

    def with_params(self, params: Sequence[np.ndarray]) -> "CompositeEnergy":
        return CompositeEnergy(self.active.with_params(params), self.prior, self.sigma)

    def energy(self, x: np.ndarray) -> np.ndarray:
        gauss = np.sum(x * x, axis=1) / (2.0 * self.sigma ** 2)
        return self.active.energy(x) + self.prior.energy(x) + gauss

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        return self.active.grad_x(x) + self.prior.grad_x(x) + x / self.sigma ** 2

    def param_grad(self, x: np.ndarray, seed: np.ndarray) -> List[np.ndarray]:
        return self.active.param_grad(x, seed)

    def to_record(self) -> EnergyRecord:
        active_meta, active_arrays = self.active.to_record()
        prior_meta, prior_arrays = self.prior.to_record()
        arrays = {f"active/{k}": v for k, v in active_arrays.items()}
        arrays.update({f"prior/{k}": v for k, v in prior_arrays.items()})
        return {"kind": "composite", "sigma": self.sigma, "active": active_meta, "prior": prior_meta}, arrays
