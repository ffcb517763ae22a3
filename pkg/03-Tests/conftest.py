"""
Shared fixtures: tiny training configurations that run in well under a second.
"""
import numpy as np
import pytest

from ebmlife.core.config import Regime
from ebmlife.core.datasets import double_well_1d
from ebmlife.core.trainer import TrainConfig, default_energy

SMALL_OVERRIDES = {
    "total_steps": 12,
    "batch_size": 8,
    "bank_size": 32,
    "mcmc_steps": 5,
    "step_size": 0.05,
    "temperature": 1.0,
    "lr_schedule": 1e-3,
    "generator_hidden": (8,),
    "defense_steps": 50,
    "burn_in_size": 16,
    "burn_in_threshold": 3,
    "sigma": 2.0,
}


@pytest.fixture
def small_config():
    """Factory: TrainConfig for a regime with tiny sizes (midrun/longrun rejuvenate from data)"""
    def build(regime, **overrides) -> TrainConfig:
        values = dict(SMALL_OVERRIDES)
        if Regime(regime) != Regime.SHORTRUN:
            values["rejuvenation_source"] = "data"
        values.update(overrides)
        return TrainConfig.for_regime(regime, **values)
    return build


@pytest.fixture
def small_energy():
    """Factory: a one-hidden-layer energy network"""
    def build(dim: int = 1, seed: int = 0):
        return default_energy(dim, np.random.default_rng(seed), hidden=(16,))
    return build


@pytest.fixture
def dataset():
    return double_well_1d()
