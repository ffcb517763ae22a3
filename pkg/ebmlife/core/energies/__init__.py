"""
Energy models and the module-level operations used by samplers and trainers.
"""
import numpy as np

from .analytic import DoubleWellEnergy, GaussianMixtureEnergy, QuadraticEnergy, ZeroEnergy
from .base import EnergyModel, Temperature, as_state_batch
from .composite import CompositeEnergy
from .mlp import MlpEnergy

__all__ = [
    "CompositeEnergy",
    "DoubleWellEnergy",
    "EnergyModel",
    "GaussianMixtureEnergy",
    "MlpEnergy",
    "QuadraticEnergy",
    "Temperature",
    "ZeroEnergy",
    "compose_with_prior",
    "energy",
    "energy_grad_x",
]


def energy(model: EnergyModel, x: np.ndarray):
    """
    U(x; theta) for one state (returns float) or a batch (returns (B,)).

    Raises:
        NonFiniteInputError: If x is not finite
    """
    batch, single = as_state_batch(model, x)
    values = model.energy(batch)
    return float(values[0]) if single else values


def energy_grad_x(model: EnergyModel, x: np.ndarray) -> np.ndarray:
    """Exact input gradient, same shape as x"""
    batch, single = as_state_batch(model, x)
    grads = model.grad_x(batch)
    return grads[0] if single else grads


def compose_with_prior(active: EnergyModel, prior: EnergyModel, sigma: float) -> CompositeEnergy:
    """
    Longrun energy active(x) + prior(x) + ||x||^2 / (2 sigma^2).

    The prior is frozen: parameter gradients of the result reach only `active`.

    Raises:
        ValueError: If sigma <= 0
    """
    return CompositeEnergy(active, prior, sigma)
