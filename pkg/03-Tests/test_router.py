"""
Unit tests for DatasetRouter and EnergyRouter.
Tests name resolution, energy construction and record round trips.
"""
import numpy as np
import pytest

from ebmlife.core.autodiff import init_dense_net
from ebmlife.core.datasets import MixtureDataset, TwoMoonsDataset
from ebmlife.core.energies import (
    CompositeEnergy,
    DoubleWellEnergy,
    GaussianMixtureEnergy,
    MlpEnergy,
    QuadraticEnergy,
    ZeroEnergy,
    compose_with_prior,
    energy,
)
from ebmlife.core.generator import Generator, generate
from ebmlife.core.router import DATASETS, ENERGY_KINDS, DatasetRouter, EnergyRouter


class TestDatasetRouter:
    """Test suite for DatasetRouter"""

    def test_available_lists_registry(self):
        """Test every registered name is listed"""
        assert DatasetRouter.available() == sorted(DATASETS)

    @pytest.mark.parametrize("name", sorted(DATASETS))
    def test_get_dataset(self, name):
        """Test each name builds a dataset carrying that name"""
        assert DatasetRouter.get_dataset(name).name == name

    def test_types(self):
        """Test mixture and manifold datasets resolve to their classes"""
        assert isinstance(DatasetRouter.get_dataset("ring-2d"), MixtureDataset)
        assert isinstance(DatasetRouter.get_dataset("two-moons-2d"), TwoMoonsDataset)

    def test_unknown_dataset(self):
        """Test error on unknown dataset"""
        with pytest.raises(ValueError, match="Unknown dataset"):
            DatasetRouter.get_dataset("mnist")


class TestEnergyRouter:
    """Test suite for EnergyRouter"""

    def test_get_energy_mlp(self):
        """Test the mlp kind builds a network of the requested shape"""
        model = EnergyRouter.get_energy("mlp", 2, gen=np.random.default_rng(0), hidden=(8, 4))
        assert isinstance(model, MlpEnergy)
        assert [layer.weight.shape for layer in model.net.layers] == [(8, 2), (4, 8), (1, 4)]

    def test_get_energy_mlp_needs_generator(self):
        """Test error when an mlp energy has no initialization source"""
        with pytest.raises(ValueError, match="random generator"):
            EnergyRouter.get_energy("mlp", 2)

    @pytest.mark.parametrize("kind,cls", [("quadratic", QuadraticEnergy), ("double-well", DoubleWellEnergy), ("zero", ZeroEnergy)])
    def test_get_energy_analytic(self, kind, cls):
        """Test analytic kinds"""
        model = EnergyRouter.get_energy(kind, 3)
        assert isinstance(model, cls)
        assert model.dim == 3

    def test_get_energy_data_density(self):
        """Test data-density returns the dataset's -log q"""
        ds = DatasetRouter.get_dataset("ring-2d")
        model = EnergyRouter.get_energy("data-density", 2, dataset=ds)
        assert isinstance(model, GaussianMixtureEnergy)

    def test_get_energy_data_density_without_oracle(self):
        """Test error for a dataset without a closed-form density"""
        with pytest.raises(ValueError, match="closed-form density"):
            EnergyRouter.get_energy("data-density", 2, dataset=DatasetRouter.get_dataset("two-moons-2d"))

    def test_get_energy_unknown(self):
        """Test error on unknown energy kind"""
        with pytest.raises(ValueError, match="Unknown energy kind"):
            EnergyRouter.get_energy("resnet", 2)
        assert "resnet" not in ENERGY_KINDS

    def test_record_round_trips(self):
        """Test every energy family is rebuilt from its record"""
        x = np.random.default_rng(1).normal(size=(4, 2))
        mlp = MlpEnergy(init_dense_net([2, 5, 1], np.random.default_rng(2)))
        mixture = DatasetRouter.get_dataset("two-class-2d").density_energy()
        models = [
            mlp,
            QuadraticEnergy(2),
            DoubleWellEnergy(2),
            ZeroEnergy(2),
            mixture,
            compose_with_prior(mlp, mixture, sigma=0.5),
        ]
        for model in models:
            rebuilt = EnergyRouter.energy_from_record(*model.to_record())
            assert type(rebuilt) is type(model)
            np.testing.assert_array_equal(energy(rebuilt, x), energy(model, x))

    def test_composite_record_keeps_parts(self):
        """Test a composite record rebuilds active, prior and sigma"""
        active = MlpEnergy(init_dense_net([1, 3, 1], np.random.default_rng(0)))
        rebuilt = EnergyRouter.energy_from_record(*compose_with_prior(active, DoubleWellEnergy(1), 0.15).to_record())
        assert isinstance(rebuilt, CompositeEnergy)
        assert isinstance(rebuilt.prior, DoubleWellEnergy)
        assert rebuilt.sigma == 0.15

    def test_unknown_record(self):
        """Test error on an unknown record kind"""
        with pytest.raises(ValueError, match="Unknown energy record kind"):
            EnergyRouter.energy_from_record({"kind": "resnet"}, {})

    def test_generator_record(self):
        """Test generators round trip and foreign records are refused"""
        generator = Generator(init_dense_net([2, 4, 1], np.random.default_rng(3), recenter=True))
        rebuilt = EnergyRouter.generator_from_record(*generator.to_record())
        z = np.random.default_rng(4).normal(size=(6, 2))
        np.testing.assert_array_equal(generate(rebuilt, z), generate(generator, z))
        with pytest.raises(ValueError, match="generator record"):
            EnergyRouter.generator_from_record({"kind": "mlp"}, {})
