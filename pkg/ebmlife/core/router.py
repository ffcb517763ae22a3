"""
Dataset and energy router - builds toy datasets and energy models by name,
and rebuilds saved models from their checkpoint records.
"""
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .autodiff import DenseNet
from .config import Activation
from .datasets import (
    ToyDataset,
    bounded_ring_2d,
    double_well_1d,
    gaussian_1d,
    product_8d,
    ring_2d,
    two_class_2d,
    two_moons_2d,
)
from .energies import (
    CompositeEnergy,
    DoubleWellEnergy,
    EnergyModel,
    GaussianMixtureEnergy,
    MlpEnergy,
    QuadraticEnergy,
    ZeroEnergy,
)
from .generator import Generator
from .trainer import default_energy

DATASETS: Dict[str, Callable[[], ToyDataset]] = {
    "double-well-1d": double_well_1d,
    "gaussian-1d": gaussian_1d,
    "ring-2d": ring_2d,
    "two-class-2d": two_class_2d,
    "bounded-ring-2d": bounded_ring_2d,
    "two-moons-2d": two_moons_2d,
    "product-8d": product_8d,
}

ENERGY_KINDS = ("mlp", "quadratic", "double-well", "zero", "data-density")


def _params(arrays: Mapping[str, np.ndarray], prefix: str = "") -> List[np.ndarray]:
    params = []
    while f"{prefix}p{len(params)}" in arrays:
        params.append(np.asarray(arrays[f"{prefix}p{len(params)}"], dtype=np.float64))
    return params


def _sub_arrays(arrays: Mapping[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {name[len(prefix):]: value for name, value in arrays.items() if name.startswith(prefix)}


class DatasetRouter:
    """Resolves toy dataset names"""

    @staticmethod
    def available() -> List[str]:
        return sorted(DATASETS)

    @staticmethod
    def get_dataset(name: str) -> ToyDataset:
        """
        Build a registered toy dataset.

        Raises:
            ValueError: If the name is not registered
        """
        if name not in DATASETS:
            raise ValueError(
                f"Unknown dataset: {name}. "
                f"Valid options: {DatasetRouter.available()}"
            )
        return DATASETS[name]()


class EnergyRouter:
    """
    Builds energies from configuration and rebuilds them from records.
    """

    @staticmethod
    def get_energy(
        kind: str,
        dim: int,
        gen: Optional[np.random.Generator] = None,
        hidden: Sequence[int] = (64, 64),
        activation: Activation = Activation.LEAKY_RELU,
        dataset: Optional[ToyDataset] = None,
    ) -> EnergyModel:
        """
        Get a fresh energy of the requested family.

        Args:
            kind: One of ENERGY_KINDS
            dim: State dimension
            gen: Initialization source (required for "mlp")
            hidden: Hidden widths of an "mlp" energy
            activation: Hidden nonlinearity of an "mlp" energy
            dataset: Dataset whose closed-form -log q is used by "data-density"

        Raises:
            ValueError: If the kind is unknown or misconfigured
        """
        if kind == "mlp":
            if gen is None:
                raise ValueError("mlp energies need a random generator for initialization")
            return default_energy(dim, gen, hidden=tuple(hidden), activation=Activation(activation))

        elif kind == "quadratic":
            return QuadraticEnergy(dim)

        elif kind == "double-well":
            return DoubleWellEnergy(dim)

        elif kind == "zero":
            return ZeroEnergy(dim)

        elif kind == "data-density":
            model = dataset.density_energy() if dataset is not None else None
            if model is None:
                raise ValueError(
                    "data-density energy needs a dataset with a closed-form density. "
                    f"Datasets with one: {[n for n in DATASETS if DATASETS[n]().density_energy() is not None]}"
                )
            return model

        else:
            raise ValueError(
                f"Unknown energy kind: {kind}. "
                f"Valid options: {list(ENERGY_KINDS)}"
            )

    @staticmethod
    def energy_from_record(meta: Mapping, arrays: Mapping[str, np.ndarray]) -> EnergyModel:
        """
        Rebuild an energy from the (metadata, arrays) pair produced by `to_record()`.

        Raises:
            ValueError: If the record kind is unknown
        """
        kind = meta.get("kind")
        if kind == "mlp":
            return MlpEnergy(DenseNet.from_description(meta["layers"], _params(arrays)))
        if kind == "zero":
            return ZeroEnergy(meta.get("dim"))
        if kind == "quadratic":
            return QuadraticEnergy(meta.get("dim"))
        if kind == "double-well":
            return DoubleWellEnergy(meta.get("dim"))
        if kind == "mixture":
            return GaussianMixtureEnergy(arrays["weights"], arrays["means"], arrays["covariances"])
        if kind == "composite":
            return CompositeEnergy(
                EnergyRouter.energy_from_record(meta["active"], _sub_arrays(arrays, "active/")),
                EnergyRouter.energy_from_record(meta["prior"], _sub_arrays(arrays, "prior/")),
                float(meta["sigma"]),
            )
        raise ValueError(
            f"Unknown energy record kind: {kind}. "
            f"Valid options: ['mlp', 'zero', 'quadratic', 'double-well', 'mixture', 'composite']"
        )

    @staticmethod
    def generator_from_record(meta: Mapping, arrays: Mapping[str, np.ndarray]) -> Generator:
        if meta.get("kind") != "generator":
            raise ValueError(f"Expected a generator record, got kind {meta.get('kind')}")
        return Generator(DenseNet.from_description(meta["layers"], _params(arrays)))
