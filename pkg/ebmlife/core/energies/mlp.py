"""
Energies parameterized by a dense network with a single output.
"""
from typing import List, Sequence

import numpy as np

from ..autodiff import DenseNet, backward, forward, input_gradient
from ..errors import ShapeError
from .base import EnergyModel, EnergyRecord


class MlpEnergy(EnergyModel):
    """U(x; theta) = net(x)"""

    trainable = True

    def __init__(self, net: DenseNet):
        if net.out_dim != 1:
            raise ShapeError(f"an energy network needs one output, got {net.out_dim}")
        self.net = net

    @property
    def dim(self) -> int:
        return self.net.in_dim

    @property
    def params(self) -> List[np.ndarray]:
        return self.net.params

    def with_params(self, params: Sequence[np.ndarray]) -> "MlpEnergy":
        return MlpEnergy(self.net.with_params(params))

    def energy(self, x: np.ndarray) -> np.ndarray:
        return forward(self.net, x)[:, 0]

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        return input_gradient(self.net, x, np.ones((x.shape[0], 1)))

    def param_grad(self, x: np.ndarray, seed: np.ndarray) -> List[np.ndarray]:
        seed = np.asarray(seed, dtype=np.float64).reshape(-1, 1)
        return backward(self.net, x, seed).param_grads

    def to_record(self) -> EnergyRecord:
        arrays = {f"p{i}": p for i, p in enumerate(self.net.params)}
        return {"kind": "mlp", "layers": self.net.describe()}, arrays
