"""
Base interface for energy models U(x; theta).
Every energy family implements this abstract base class; the sampled
density is proportional to exp(-T * U(x)).
"""
from abc import ABC, abstractmethod
from typing import Annotated, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field

from ..errors import NonFiniteInputError, ShapeError

# Multiplies the drift (and the grid-oracle exponent); Langevin noise is not rescaled.
Temperature = Annotated[float, Field(gt=0)]

EnergyRecord = Tuple[Dict, Dict[str, np.ndarray]]


class EnergyModel(ABC):
    """Abstract base class for scalar potentials"""

    #: whether trainers may update `params`
    trainable: bool = False

    @abstractmethod
    def energy(self, x: np.ndarray) -> np.ndarray:
        """
        Energy of a batch.

        Args:
            x: States of shape (B, d), already validated finite

        Returns:
            Energies of shape (B,)
        """
        pass

    @abstractmethod
    def grad_x(self, x: np.ndarray) -> np.ndarray:
        """
        Input gradient of a batch.

        Args:
            x: States of shape (B, d)

        Returns:
            Gradients of shape (B, d)
        """
        pass

    @abstractmethod
    def to_record(self) -> EnergyRecord:
        """Return (metadata, named arrays) sufficient to rebuild the model"""
        pass

    @property
    def dim(self) -> Optional[int]:
        """State dimension, or None if the energy accepts any dimension"""
        return None

    @property
    def params(self) -> List[np.ndarray]:
        """Trainable parameters (empty for fixed energies)"""
        return []

    def with_params(self, params: Sequence[np.ndarray]) -> "EnergyModel":
        """Copy with new parameter values"""
        if len(params):
            raise ShapeError(f"{type(self).__name__} has no trainable parameters")
        return self

    def param_grad(self, x: np.ndarray, seed: np.ndarray) -> List[np.ndarray]:
        """
        Gradient of sum_b seed[b] * U(x[b]) with respect to `params`.

        Args:
            x: States of shape (B, d)
            seed: Per-state weights of shape (B,)
        """
        return []


def as_state_batch(model: EnergyModel, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Validate x and lift a single state to a batch of one"""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2:
        raise ShapeError(f"states must be (d,) or (B, d), got {x.shape}")
    if model.dim is not None and batch.shape[1] != model.dim:
        raise ShapeError(f"state dimension {batch.shape[1]} does not match energy dimension {model.dim}")
    if not np.all(np.isfinite(batch)):
        raise NonFiniteInputError("energy evaluated at a non-finite state")
    return batch, single
