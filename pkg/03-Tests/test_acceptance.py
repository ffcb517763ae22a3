"""
Statistical acceptance runs on the toy densities.
Each study trains at full toy scale, so the whole module is marked slow.
"""
import json
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from ebmlife.cli.runner import main, parse_config
from ebmlife.core.autodiff import DenseLayer, DenseNet, init_dense_net
from ebmlife.core.banks import NoiseSource
from ebmlife.core.config import Activation, Config, Regime
from ebmlife.core.datasets import double_well_1d, gaussian_1d, ring_2d, two_class_2d
from ebmlife.core.defense import AttackConfig, Classifier, DefenseConfig, evaluate_defense
from ebmlife.core.generator import Generator
from ebmlife.core.metrics import batch_diversity, empirical_pmf, grid_boltzmann, kl_divergence
from ebmlife.core.rng import RngStream
from ebmlife.core.sampler import LangevinConfig, langevin_run
from ebmlife.core.trainer import TrainConfig, default_energy, train_longrun, train_midrun, train_shortrun

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "04-Assets" / "configs"
LONGRUN_BUDGET_S = 900.0


@pytest.fixture
def workspace():
    """Create temporary directory for run outputs"""
    temp = tempfile.mkdtemp()
    yield Path(temp)
    shutil.rmtree(temp)


def _steady_state_kl(model, ds, sampler: LangevinConfig, rng: RngStream, chains: int = 256) -> float:
    """KL of pooled second-half chain states from uniform noise against the data pmf"""
    grid = ds.default_grid()
    x0 = NoiseSource(ds.dim, "uniform", 3.0).draw(chains, rng.child("init").generator())
    traj = langevin_run(model, x0, sampler, rng.child("chains"))
    pooled = traj.recorded_states[traj.recorded_steps >= sampler.num_steps // 2].reshape(-1, ds.dim)
    return kl_divergence(empirical_pmf(pooled, grid), grid_boltzmann(ds.density_energy(), grid))


class TestLongrunCalibration:
    """Test suite for steady-state alignment of longrun models"""

    def test_longrun_config_matches_data(self, workspace):
        """Test the shipped longrun config trains within budget and its 10^5-step chains match the data"""
        text = (CONFIGS / "longrun-double-well.toml").read_text()
        checkpoint = workspace / "train" / "checkpoint.eblc"
        text = text.replace('checkpoint = "runs/longrun/checkpoint.eblc"', f'checkpoint = "{checkpoint}"')
        path = workspace / "longrun.toml"
        path.write_text(text)

        config = parse_config(str(path))
        assert config.trainer.total_steps == 10000
        assert config.trainer.prior_steps == 1500
        assert config.output.mcmc_steps == 100000

        assert main(["train-longrun", "--config", str(path), "--out", str(workspace / "train")]) == 0
        manifest = json.loads((workspace / "train" / Config.MANIFEST_FILE).read_text())
        assert manifest["wall_time_s"] < LONGRUN_BUDGET_S

        assert main(["steady-state", "--config", str(path), "--out", str(workspace / "steady")]) == 0
        summary = json.loads((workspace / "steady" / Config.MANIFEST_FILE).read_text())["summary"]
        assert summary["kl_data"] <= 0.1

    def test_shortrun_recipe_is_misaligned(self):
        """Test the shortrun recipe on the same data drifts at least 0.3 nats from it at 10^5 steps"""
        ds = double_well_1d()
        cfg = TrainConfig.for_regime(Regime.SHORTRUN, total_steps=2000, bank_size=2000, metrics_every=100)
        ebm, _, _ = train_shortrun(cfg, ds, RngStream(11), ebm=default_energy(1, np.random.default_rng(11)))

        sampler = LangevinConfig(step_size=cfg.step_size, num_steps=100000, temperature=cfg.temperature,
                                 record_every=10000)
        assert _steady_state_kl(ebm, ds, sampler, RngStream(11).child("steady-state")) >= 0.3


class TestAnnealingAblation:
    """Test suite for learning-rate annealing in longrun training"""

    STEPS = 3000
    RATE = 1e-3

    def _exact_kl(self, schedule, seed: int) -> float:
        ds = gaussian_1d()
        cfg = TrainConfig.for_regime(
            Regime.LONGRUN,
            total_steps=self.STEPS,
            lr_schedule=schedule,
            bank_size=1000,
            burn_in_size=500,
            burn_in_threshold=20,
            mcmc_steps=50,
            burn_in_steps=50,
            step_size=0.05,
            temperature=1.0,
            sigma=2.0,
            rejuvenation_source="noise",
            noise_scale=3.0,
            metrics_every=500,
        )
        ebm = default_energy(1, np.random.default_rng(seed), hidden=(32, 32))
        model = train_longrun(cfg, ds, None, None, RngStream(seed), ebm=ebm)
        grid = ds.default_grid()
        return kl_divergence(grid_boltzmann(model, grid), grid_boltzmann(ds.density_energy(), grid))

    def test_constant_rate_is_worse(self):
        """Test a constant rate ends at least 3x further from the data than the annealed schedule over 3 seeds"""
        n = self.STEPS
        annealed = [
            (self.RATE, 0), (self.RATE / 10, n // 3), (self.RATE / 100, n // 2),
            (self.RATE / 1000, 2 * n // 3), (self.RATE / 10000, 5 * n // 6),
        ]
        seeds = (1, 2, 3)
        constant_kl = np.mean([self._exact_kl(self.RATE, s) for s in seeds])
        annealed_kl = np.mean([self._exact_kl(annealed, s) for s in seeds])
        assert constant_kl >= 3.0 * annealed_kl


class TestMidrunStability:
    """Test suite for trajectory stability of midrun models"""

    def test_chains_stay_in_modes(self):
        """Test chains from data keep 95% of mass within 3 std of a mode for 20 K steps"""
        ds = ring_2d()
        cfg = TrainConfig.for_regime(
            Regime.MIDRUN,
            total_steps=4000,
            bank_size=2000,
            mcmc_steps=50,
            step_size=0.05,
            temperature=1.0,
            defense_steps=1000,
            rejuvenation_source="data",
            lr_schedule=[(1e-3, 0), (1e-4, 3000)],
            metrics_every=500,
        )
        assert cfg.rejuvenation_probability == pytest.approx(0.05)
        ebm = train_midrun(cfg, ds, None, RngStream(5), ebm=default_energy(2, np.random.default_rng(5)))

        x0 = ds.sample(512, np.random.default_rng(6))
        sampler = LangevinConfig(step_size=0.05, num_steps=20 * cfg.mcmc_steps, temperature=1.0, record_every=100)
        traj = langevin_run(ebm, x0, sampler, RngStream(6).child("retention"))
        for states in traj.recorded_states:
            nearest = np.min(np.linalg.norm(states[:, None, :] - ds.means[None], axis=2), axis=1)
            assert np.mean(nearest <= 3 * 0.2) >= 0.95


class TestDefenseMargin:
    """Test suite for purification against BPDA+EOT PGD"""

    @pytest.fixture
    def tilted_classifier(self):
        # accurate on the two classes but with a small l-infinity margin
        angle = np.deg2rad(70.0)
        direction = 4.0 * np.array([np.cos(angle), np.sin(angle)])
        weight = np.stack([-direction, direction])
        return Classifier(DenseNet((DenseLayer(weight, np.zeros(2), Activation.IDENTITY),)))

    def test_purification_beats_undefended(self, tilted_classifier):
        """Test K_def = 500 raises robust accuracy by at least 0.2 over K_def = 0"""
        ds = two_class_2d()
        cfg = TrainConfig.for_regime(
            Regime.MIDRUN,
            total_steps=3000,
            bank_size=2000,
            mcmc_steps=50,
            step_size=0.05,
            temperature=1.0,
            defense_steps=500,
            rejuvenation_source="data",
            lr_schedule=[(1e-3, 0), (1e-4, 2000)],
            metrics_every=500,
        )
        ebm = train_midrun(cfg, ds, None, RngStream(3), ebm=default_energy(2, np.random.default_rng(3), hidden=(32, 32)))

        x, y = ds.sample_labeled(50, np.random.default_rng(8))
        assert np.mean(tilted_classifier.predict(x) == y) >= 0.9
        attack = AttackConfig(epsilon=0.5, alpha=0.1, steps=50, reps=8)
        defended = evaluate_defense(
            x, y, tilted_classifier, ebm, attack,
            DefenseConfig(steps=500, reps=32, step_size=0.05, temperature=1.0), RngStream(9),
        )
        undefended = evaluate_defense(
            x, y, tilted_classifier, ebm, attack,
            DefenseConfig(steps=0, reps=1, step_size=0.05, temperature=1.0), RngStream(9),
        )
        assert defended.robust_accuracy - undefended.robust_accuracy >= 0.2


class TestHybridDiversity:
    """Test suite for shortrun sample diversity from a collapsed generator"""

    def _final_diversity(self, p: float, rounds: int) -> float:
        cfg = TrainConfig.for_regime(
            Regime.SHORTRUN,
            total_steps=5000,
            bank_size=2000,
            mcmc_steps=10,
            step_size=0.05,
            temperature=1.0,
            lr_schedule=1e-3,
            rejuvenation_probability=p,
            max_update_rounds=rounds,
            metrics_every=100,
        )
        generator = Generator(init_dense_net([2, 32, 32, 2], np.random.default_rng(2), gain=1e-3))
        ebm = default_energy(2, np.random.default_rng(1))
        _, _, metrics = train_shortrun(cfg, ring_2d(), RngStream(4), ebm=ebm, generator=generator)
        return float(np.mean([row["diversity"] for row in metrics[-5:]]))

    def test_bank_restores_diversity(self):
        """Test the hybrid bank reaches 0.8x data diversity while pure cooperative stays below 0.5x"""
        reference = batch_diversity(ring_2d().sample(2000, np.random.default_rng(0)))
        assert self._final_diversity(0.01, 100) >= 0.8 * reference
        assert self._final_diversity(1.0, 1) <= 0.5 * reference
