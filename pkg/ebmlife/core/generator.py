"""
Latent-to-sample generator g(z; phi) and its cooperative reconstruction loss.
"""
from typing import List, Sequence

import numpy as np

from .autodiff import DenseNet, backward, forward
from .errors import NonFiniteInputError, ShapeError


class Generator:
    """
    Dense network mapping standard normal latents (m) to samples (d).

    Args:
        net: Network with in_dim = m and out_dim = d
    """

    def __init__(self, net: DenseNet):
        self.net = net

    @property
    def latent_dim(self) -> int:
        return self.net.in_dim

    @property
    def dim(self) -> int:
        return self.net.out_dim

    @property
    def params(self) -> List[np.ndarray]:
        return self.net.params

    def with_params(self, params: Sequence[np.ndarray]) -> "Generator":
        return Generator(self.net.with_params(params))

    def to_record(self):
        """(metadata, named arrays) for checkpoints"""
        return {"kind": "generator", "layers": self.net.describe()}, {f"p{i}": p for i, p in enumerate(self.net.params)}


def _check_latents(gen: Generator, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != gen.latent_dim:
        raise ShapeError(f"latents must be (B, {gen.latent_dim}), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NonFiniteInputError("generator latents must be finite")
    return z


def _check_pairs(gen: Generator, z: np.ndarray, targets: np.ndarray):
    z = _check_latents(gen, z)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (z.shape[0], gen.dim):
        raise ShapeError(f"targets {targets.shape} do not pair with {z.shape[0]} latents of output {gen.dim}")
    return z, targets


def generate(gen: Generator, z: np.ndarray) -> np.ndarray:
    """Deterministic forward map of a latent batch (B, m) -> (B, d)"""
    return forward(gen.net, _check_latents(gen, z))


def cooperative_loss(gen: Generator, z_batch: np.ndarray, target_batch: np.ndarray) -> float:
    """
    Reconstruction loss (1/B) sum_b ||g(z_b) - target_b||^2.

    Targets are the Langevin-revised samples paired with each latent.
    """
    z, targets = _check_pairs(gen, z_batch, target_batch)
    residual = forward(gen.net, z) - targets
    return float(np.sum(residual * residual) / z.shape[0])


def cooperative_grad(gen: Generator, z_batch: np.ndarray, target_batch: np.ndarray) -> List[np.ndarray]:
    """
    Gradient of cooperative_loss with respect to phi.

    Targets and latents are treated as constants (straight-through latents);
    no gradient is produced for them.
    """
    z, targets = _check_pairs(gen, z_batch, target_batch)
    residual = forward(gen.net, z) - targets
    seed = (2.0 / z.shape[0]) * residual
    return backward(gen.net, z, seed).param_grads
