"""
Configuration management for ebmlife.
Reads the log level from the environment; everything else is a documented constant.
"""
import logging
import os
from enum import Enum
from typing import Any, Dict, Optional


class Regime(str, Enum):
    """MCMC trajectory regime targeted by a training run"""
    SHORTRUN = "shortrun"  # synthesis, cooperative-persistent hybrid
    MIDRUN = "midrun"  # purification, generator-rejuvenated persistent bank
    LONGRUN = "longrun"  # density calibration, dual burn-in/update banks


class SampleInit(str, Enum):
    """Chain initializations understood by the `sample` subcommand"""
    GENERATOR = "generator"
    DATA = "data"
    NOISE = "noise"
    BANK = "bank"


class RejuvenationKind(str, Enum):
    """Sources that can refill a bank slot"""
    GENERATOR = "generator"
    DATA = "data"
    NOISE = "noise"


class Activation(str, Enum):
    """Dense-layer nonlinearities"""
    IDENTITY = "identity"
    LEAKY_RELU = "leaky_relu"
    TANH = "tanh"


class PriorMode(str, Enum):
    """Where the frozen prior of a longrun energy comes from"""
    NONE = "none"
    TRAIN = "train"
    CHECKPOINT = "checkpoint"


class Config:
    """Central configuration for ebmlife"""

    # --- Logging (the only environment-driven setting) ---
    LOG_LEVEL: str = os.getenv("EBM_LOG_LEVEL", "INFO")
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # --- File formats ---
    CHECKPOINT_MAGIC: bytes = b"EBLC"
    CHECKPOINT_VERSION: int = 1
    METRICS_FILE: str = "metrics.csv"
    MANIFEST_FILE: str = "manifest.json"
    ERROR_FILE: str = "error.json"
    LEDGER_FILE: str = "ledger.db"
    METRICS_COLUMNS = (
        "step",
        "lr",
        "mean_pos_energy",
        "mean_neg_energy",
        "grad_norm",
        "diversity",
        "rejuvenation_count",
        "promotion_count",
        "wall_ms",
    )

    # --- Numerics ---
    FD_DENOM_EPS: float = 1e-8
    KL_SMOOTHING: float = 1e-12
    FRECHET_RIDGE: float = 1e-6
    GRID_MAX_BINS: int = 512
    GRID_MAX_DIM: int = 2
    NOISE_CHUNK: int = 256  # Langevin steps drawn per RNG counter block
    LIFETIME_WINDOW: int = 100000  # rejuvenation lifetimes kept per bank for histograms

    # --- Step-decay learning-rate schedule (gamma_anneal) ---
    ANNEAL_SCHEDULE = (
        (1e-4, 0),
        (1e-5, 50000),
        (1e-6, 75000),
        (1e-7, 100000),
        (1e-8, 125000),
    )

    @classmethod
    def validate(cls) -> None:
        """Validate configuration values"""
        if not isinstance(logging.getLevelName(cls.LOG_LEVEL.upper()), int):
            raise ValueError(f"EBM_LOG_LEVEL is not a logging level: {cls.LOG_LEVEL}")

    @classmethod
    def get_summary(cls) -> dict:
        """Get configuration summary for logging/manifests"""
        return {
            "log_level": cls.LOG_LEVEL,
            "checkpoint_version": cls.CHECKPOINT_VERSION,
            "metrics_columns": list(cls.METRICS_COLUMNS),
        }


def setup_logging(level: Optional[str] = None) -> None:
    """
    Configure root logging once for a CLI process.

    Args:
        level: Level name overriding Config.LOG_LEVEL
    """
    level_name = (level or Config.LOG_LEVEL).upper()
    resolved = getattr(logging, level_name, logging.INFO)
    logging.basicConfig(level=resolved, format=Config.LOG_FORMAT)


# Image-scale defaults per regime. batch_size and the generator architecture
# are toy-scale choices.
REGIME_DEFAULTS: Dict[Regime, Dict[str, Any]] = {
    Regime.SHORTRUN: {
        "total_steps": 100000,
        "batch_size": 64,
        "data_epsilon": 1e-2,
        "lr_schedule": ((1e-4, 0),),
        "grad_clip": 0.0,
        "step_size": 5e-3,
        "mcmc_steps": 100,
        "rejuvenation_probability": 0.5,
        "temperature": 1e-4,
        "max_update_rounds": 2,
        "bank_size": 10000,
        "generator_lr": 1e-4,
        "generator_grad_clip": 0.0,
        "generator_recenter": True,
    },
    Regime.MIDRUN: {
        "total_steps": 150000,
        "batch_size": 64,
        "data_epsilon": 2e-2,
        "lr_schedule": Config.ANNEAL_SCHEDULE,
        "step_size": 1e-2,
        "mcmc_steps": 100,
        "temperature": 1e-4,
        "bank_size": 20000,
        "defense_steps": 2000,
    },
    Regime.LONGRUN: {
        "total_steps": 250000,
        "batch_size": 64,
        "data_epsilon": 2e-2,
        "lr_schedule": Config.ANNEAL_SCHEDULE,
        "step_size": 1e-2,
        "mcmc_steps": 100,
        "burn_in_steps": 100,
        "burn_in_threshold": 750,
        "temperature": 1e-4,
        "sigma": 0.15,
        "bank_size": 10000,
        "burn_in_size": 1000,
    },
}

# Prior energy for longrun runs (midrun-style loop)
PRIOR_DEFAULTS: Dict[str, Any] = {
    "total_steps": 150000,
    "data_epsilon": 2e-2,
    "lr_schedule": ((1e-4, 0),),
    "step_size": 1e-2,
    "mcmc_steps": 50,
    "rejuvenation_probability": 0.2,
    "temperature": 1e-4,
    "bank_size": 10000,
}

# Attack and purification settings for `defend`
DEFENSE_DEFAULTS: Dict[str, Any] = {
    "attack_steps": 50,
    "epsilon": 8.0 / 255.0,
    "alpha": 2.0 / 255.0,
    "attack_reps": 48,
    "defense_reps": 128,
    "defense_steps": 2000,
    "step_size": 1e-2,
    "temperature": 1e-4,
    "random_start": True,
}

# Chain length for `sample`
SAMPLE_DEFAULTS: Dict[str, Any] = {
    "mcmc_steps": 350,
    "step_size": 5e-3,
    "temperature": 1e-4,
}
