"""
Toy datasets with known densities and the frozen generator fixture.
"""
import itertools
import logging
from abc import ABC, abstractmethod
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .autodiff import DenseLayer, DenseNet, init_dense_net
from .config import Activation
from .energies import EnergyModel, GaussianMixtureEnergy
from .errors import FixtureQualityError
from .generator import Generator, cooperative_grad, generate
from .metrics import GridSpec, gaussian_frechet
from .optim import OptimizerState, adam_step
from .rng import RngStream

logger = logging.getLogger(__name__)

Bounds = Optional[Tuple[float, float]]


class ToyDataset(ABC):
    """
    A synthetic data distribution q(x).

    Attributes:
        name: Registry name
        dim: Sample dimension
        bounds: Hypercube bounds when samples are image-like, else None
    """

    def __init__(self, name: str, dim: int, bounds: Bounds = None):
        self.name = name
        self.dim = dim
        self.bounds = bounds

    @abstractmethod
    def sample(self, n: int, gen: np.random.Generator) -> np.ndarray:
        """Draw n i.i.d. samples (n, d)"""
        pass

    @abstractmethod
    def labels(self, x: np.ndarray) -> np.ndarray:
        """Deterministic class of each point"""
        pass

    @property
    @abstractmethod
    def num_classes(self) -> int:
        pass

    def density_energy(self) -> Optional[EnergyModel]:
        """-log q as an energy, when q is known in closed form"""
        return None

    def density(self, x: np.ndarray) -> np.ndarray:
        model = self.density_energy()
        if model is None:
            raise NotImplementedError(f"{self.name} has no closed-form density")
        return np.exp(-model.energy(np.atleast_2d(x)))

    def default_grid(self) -> Optional[GridSpec]:
        """Oracle grid covering the data, or None above two dimensions"""
        return None

    def sample_labeled(self, n: int, gen: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        x = self.sample(n, gen)
        return x, self.labels(x)


class MixtureDataset(ToyDataset):
    """Gaussian mixture; the class of a point is its nearest mode"""

    def __init__(
        self,
        name: str,
        weights: Sequence[float],
        means: np.ndarray,
        covariances: np.ndarray,
        bounds: Bounds = None,
        grid: Optional[GridSpec] = None,
    ):
        self.model = GaussianMixtureEnergy(weights, means, covariances)
        super().__init__(name, self.model.dim, bounds)
        self._chol = np.linalg.cholesky(self.model.covariances)
        self._grid = grid

    @property
    def weights(self) -> np.ndarray:
        return self.model.weights

    @property
    def means(self) -> np.ndarray:
        return self.model.means

    @property
    def num_classes(self) -> int:
        return len(self.weights)

    def sample(self, n: int, gen: np.random.Generator) -> np.ndarray:
        comp = gen.choice(len(self.weights), size=n, p=self.weights)
        z = gen.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("bij,bj->bi", self._chol[comp], z)

    def labels(self, x: np.ndarray) -> np.ndarray:
        # argmin returns the lowest index on ties
        return np.argmin(cdist(np.atleast_2d(x), self.means), axis=1)

    def density_energy(self) -> EnergyModel:
        return self.model

    def default_grid(self) -> Optional[GridSpec]:
        if self._grid is not None or self.dim > 2:
            return self._grid
        spread = 5.0 * float(np.sqrt(np.max(np.diagonal(self.model.covariances, axis1=1, axis2=2))))
        low = float(self.means.min()) - spread
        high = float(self.means.max()) + spread
        return GridSpec.box(low, high, 200 if self.dim == 1 else 100, self.dim)


class TwoMoonsDataset(ToyDataset):
    """Two interleaved half circles with Gaussian noise (no closed-form density)"""

    def __init__(self, noise: float = 0.1, bounds: Bounds = None):
        super().__init__("two-moons-2d", 2, bounds)
        self.noise = noise
        angles = np.linspace(0.0, np.pi, 200)
        self._arcs = [
            np.stack([np.cos(angles), np.sin(angles)], axis=1),
            np.stack([1.0 - np.cos(angles), 0.5 - np.sin(angles)], axis=1),
        ]

    @property
    def num_classes(self) -> int:
        return 2

    def sample(self, n: int, gen: np.random.Generator) -> np.ndarray:
        moon = gen.integers(0, 2, size=n)
        t = gen.uniform(0.0, np.pi, size=n)
        upper = np.stack([np.cos(t), np.sin(t)], axis=1)
        lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        points = np.where(moon[:, None] == 0, upper, lower)
        return points + self.noise * gen.standard_normal((n, 2))

    def labels(self, x: np.ndarray) -> np.ndarray:
        dists = np.stack([cdist(np.atleast_2d(x), arc).min(axis=1) for arc in self._arcs], axis=1)
        return np.argmin(dists, axis=1)


def _isotropic(means: np.ndarray, variance: float) -> np.ndarray:
    k, d = means.shape
    return np.repeat(variance * np.eye(d)[None], k, axis=0)


def _ring(radius: float, modes: int, center: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(modes) / modes
    return np.stack([center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)], axis=1)


def double_well_1d() -> MixtureDataset:
    """Equal mixture at -1 and +1 with variance 0.1, matching the double-well minima"""
    means = np.array([[-1.0], [1.0]])
    return MixtureDataset("double-well-1d", [0.5, 0.5], means, _isotropic(means, 0.1),
                          grid=GridSpec.box(-3.0, 3.0, 120))


def gaussian_1d() -> MixtureDataset:
    means = np.array([[1.0]])
    return MixtureDataset("gaussian-1d", [1.0], means, _isotropic(means, 0.25),
                          grid=GridSpec.box(-2.0, 4.0, 120))


def ring_2d(std: float = 0.2) -> MixtureDataset:
    means = _ring(2.0, 4)
    return MixtureDataset("ring-2d", [0.25] * 4, means, _isotropic(means, std ** 2),
                          grid=GridSpec.box(-3.5, 3.5, 140, 2))


def two_class_2d(std: float = 0.3) -> MixtureDataset:
    means = np.array([[-1.5, 0.0], [1.5, 0.0]])
    return MixtureDataset("two-class-2d", [0.5, 0.5], means, _isotropic(means, std ** 2),
                          grid=GridSpec.box(-3.5, 3.5, 140, 2))


def bounded_ring_2d(std: float = 0.04) -> MixtureDataset:
    """Image-like variant living in the unit square"""
    means = _ring(0.3, 4, center=(0.5, 0.5))
    return MixtureDataset("bounded-ring-2d", [0.25] * 4, means, _isotropic(means, std ** 2),
                          bounds=(0.0, 1.0), grid=GridSpec.box(0.0, 1.0, 100, 2))


def product_8d(std: float = 0.3) -> MixtureDataset:
    """Independent +-1 modes per coordinate: 256 equally weighted components"""
    means = np.array(list(itertools.product([-1.0, 1.0], repeat=8)))
    weights = np.full(len(means), 1.0 / len(means))
    return MixtureDataset("product-8d", weights, means, np.full(len(means), std ** 2))


def two_moons_2d(noise: float = 0.1) -> TwoMoonsDataset:
    return TwoMoonsDataset(noise)


def sample_data(ds: ToyDataset, n: int, rng: RngStream) -> np.ndarray:
    """n i.i.d. draws from q using the stream's first counter block"""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return ds.sample(n, rng.generator())


def _affine_generator(mean: np.ndarray, covariance: np.ndarray) -> Generator:
    layer = DenseLayer(np.linalg.cholesky(covariance), mean, Activation.IDENTITY)
    return Generator(DenseNet((layer,)))


def frozen_generator_fixture(
    ds: ToyDataset,
    fit_budget: int,
    rng: RngStream,
    latent_dim: Optional[int] = None,
    hidden: int = 64,
    batch_size: int = 256,
    lr: float = 2e-3,
    max_frechet: float = 0.5,
) -> Generator:
    """
    A generator mapping N(0, I) latents onto the data, trained offline.

    A single Gaussian gets the exact affine map mean + L z. Anything else is
    fitted by minibatch optimal-transport regression: each latent batch is
    matched to a data batch by linear assignment and the generator is moved
    towards its matched points.

    Raises:
        FixtureQualityError: If the Frechet distance to the data exceeds max_frechet
    """
    if isinstance(ds, MixtureDataset) and len(ds.weights) == 1:
        generator = _affine_generator(ds.means[0], ds.model.covariances[0])
    else:
        latent_dim = latent_dim or ds.dim
        generator = Generator(init_dense_net(
            [latent_dim, hidden, hidden, ds.dim],
            rng.child("init").generator(),
            activation=Activation.LEAKY_RELU,
        ))
        opt = OptimizerState.zeros_like(generator.params)
        for step in range(fit_budget):
            gen = rng.child("fit").generator(counter=step)
            z = gen.standard_normal((batch_size, latent_dim))
            data = ds.sample(batch_size, gen)
            cost = cdist(generate(generator, z), data, "sqeuclidean")
            _, cols = linear_sum_assignment(cost)
            grads = cooperative_grad(generator, z, data[cols])
            generator = generator.with_params(adam_step(opt, generator.params, grads, lr))

    check = rng.child("check").generator()
    generated = generate(generator, check.standard_normal((4000, generator.latent_dim)))
    score = gaussian_frechet(generated, ds.sample(4000, check))
    logger.info(f"Frozen generator for {ds.name}: Frechet distance {score:.4f}")
    if score > max_frechet:
        raise FixtureQualityError(
            f"generator fixture for {ds.name} reached Frechet distance {score:.4f} > {max_frechet}; "
            f"raise fit_budget"
        )
    return generator
