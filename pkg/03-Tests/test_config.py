"""
Tests for experiment documents: validation, regime resolution and TOML parsing.
"""
import os
import tempfile

import pytest

from ebmlife.cli.runner import parse_config
from ebmlife.core.config import Config, Regime, RejuvenationKind, setup_logging
from ebmlife.core.errors import ConfigError
from ebmlife.core.models import ExperimentConfig


class TestExperimentConfig:
    """Test suite for ExperimentConfig.from_dict"""

    def test_minimal_document(self):
        """Test a seed alone is a valid document"""
        config = ExperimentConfig.from_dict({"seed": 3})
        assert config.seed == 3
        assert config.data.dataset == "double-well-1d"
        assert config.energy.kind == "mlp"

    def test_empty_trainer_gets_regime_defaults(self):
        """Test an empty [trainer] with a regime resolves to that regime's defaults"""
        config = ExperimentConfig.from_dict({"seed": 1, "trainer": {"regime": "shortrun"}})
        cfg = config.train_config(Regime.SHORTRUN)
        assert cfg.mcmc_steps == 100
        assert cfg.bank_size == 10000
        assert cfg.rejuvenation_probability == 0.5

    def test_sections_override_defaults(self):
        """Test values from several sections reach the TrainConfig"""
        config = ExperimentConfig.from_dict({
            "seed": 1,
            "data": {"data_epsilon": 0.0},
            "sampler": {"mcmc_steps": 20, "temperature": 1.0},
            "bank": {"bank_size": 64, "rejuvenation_source": "noise"},
            "trainer": {"total_steps": 5, "batch_size": 8, "lr_schedule": [[1e-3, 0], [1e-4, 3]], "defense_steps": 40},
        })
        cfg = config.train_config(Regime.MIDRUN)
        assert cfg.mcmc_steps == 20
        assert cfg.rejuvenation_probability == pytest.approx(0.5)
        assert cfg.rejuvenation_source == RejuvenationKind.NOISE
        assert cfg.lr_schedule.points == ((1e-3, 0), (1e-4, 3))
        assert cfg.data_epsilon == 0.0

    def test_misspelled_key_is_named(self):
        """Test an unknown key is reported with its section"""
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_dict({"seed": 1, "bank": {"bank_sise": 10}})
        assert any("bank.bank_sise" in message for message in info.value.errors)

    def test_short_rejuvenation_alias(self):
        """Test p_rejuv is accepted and range checked"""
        config = ExperimentConfig.from_dict({"seed": 1, "bank": {"p_rejuv": 0.3}})
        assert config.bank.rejuvenation_probability == 0.3
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_dict({"seed": 1, "bank": {"p_rejuv": 1.5}})
        assert all(message.startswith("bank") for message in info.value.errors)

    def test_all_errors_reported(self):
        """Test every problem is collected into one ConfigError"""
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_dict({"models": {}, "data": {"dataset": "mnist"}, "sampler": {"step_size": -1.0}})
        errors = info.value.errors
        assert any(e.startswith("models") for e in errors)
        assert any(e.startswith("seed") for e in errors)
        assert any(e.startswith("data.dataset") for e in errors)
        assert any(e.startswith("sampler.step_size") for e in errors)

    def test_invalid_regime_combination(self):
        """Test a [trainer] regime is resolved eagerly"""
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_dict({
                "seed": 1,
                "sampler": {"mcmc_steps": 100},
                "trainer": {"regime": "midrun", "defense_steps": 50},
            })
        assert any(e.startswith("trainer") for e in info.value.errors)

    def test_regime_mismatch(self):
        """Test asking for another regime than the document names"""
        config = ExperimentConfig.from_dict({"seed": 1, "trainer": {"regime": "longrun"}})
        with pytest.raises(ConfigError):
            config.train_config(Regime.MIDRUN)

    def test_seed_range(self):
        """Test seeds must fit in 64 unsigned bits"""
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"seed": -1})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"seed": 2 ** 64})

    def test_prior_config(self):
        """Test the prior uses the midrun prior recipe"""
        cfg = ExperimentConfig.from_dict({"seed": 1, "trainer": {"prior_steps": 10}}).prior_config()
        assert cfg.regime == Regime.MIDRUN
        assert cfg.total_steps == 10
        assert cfg.mcmc_steps == 50
        assert cfg.rejuvenation_probability == 0.2

    def test_defense_configs(self):
        """Test [defense] maps onto attack and purification settings"""
        config = ExperimentConfig.from_dict({
            "seed": 1,
            "defense": {"epsilon": 0.2, "alpha": 0.05, "attack_steps": 4, "defense_steps": 0, "defense_reps": 3},
        })
        attack = config.attack_config()
        defense = config.defense_config()
        assert (attack.epsilon, attack.alpha, attack.steps) == (0.2, 0.05, 4)
        assert (defense.steps, defense.reps) == (0, 3)

    def test_alpha_above_epsilon_in_document(self):
        """Test the attack check runs when the attack config is built"""
        config = ExperimentConfig.from_dict({"seed": 1, "defense": {"epsilon": 0.01, "alpha": 0.05}})
        with pytest.raises(ValueError):
            config.attack_config()


class TestParseConfig:
    """Test suite for reading TOML documents"""

    @pytest.fixture
    def write_toml(self):
        paths = []

        def write(text: str) -> str:
            with tempfile.NamedTemporaryFile("w", suffix=".toml", delete=False) as handle:
                handle.write(text)
            paths.append(handle.name)
            return handle.name

        yield write
        for path in paths:
            os.remove(path)

    def test_reads_document(self, write_toml):
        """Test a TOML file becomes an ExperimentConfig"""
        path = write_toml('seed = 9\n[data]\ndataset = "ring-2d"\n[trainer]\nregime = "midrun"\n')
        config = parse_config(path)
        assert config.seed == 9
        assert config.data.dataset == "ring-2d"
        assert config.trainer.regime == Regime.MIDRUN

    def test_seed_override(self, write_toml):
        """Test --seed replaces the document seed"""
        assert parse_config(write_toml("seed = 9\n"), seed=4).seed == 4

    def test_missing_file(self):
        """Test an unreadable path raises ConfigError"""
        with pytest.raises(ConfigError):
            parse_config("/nonexistent/config.toml")

    def test_malformed_toml(self, write_toml):
        """Test a syntax error raises ConfigError"""
        with pytest.raises(ConfigError):
            parse_config(write_toml("seed = = 1\n"))


class TestLoggingConfig:
    """Test suite for the logging configuration"""

    def test_validate_rejects_unknown_level(self, monkeypatch):
        """Test an unknown EBM_LOG_LEVEL is reported"""
        monkeypatch.setattr(Config, "LOG_LEVEL", "LOUD")
        with pytest.raises(ValueError):
            Config.validate()

    def test_setup_logging_accepts_level(self):
        """Test an explicit level name is accepted"""
        setup_logging("debug")
        assert Config.get_summary()["checkpoint_version"] == Config.CHECKPOINT_VERSION
