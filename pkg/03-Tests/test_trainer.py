"""
Tests for the maximum-likelihood gradient and the three training loops.
"""
import numpy as np
import pytest
from pydantic import ValidationError

from ebmlife.core.config import Config, Regime
from ebmlife.core.energies import CompositeEnergy, MlpEnergy, energy
from ebmlife.core.errors import NumericOverflowError, ShapeError
from ebmlife.core.generator import Generator, generate
from ebmlife.core.rng import RngStream
from ebmlife.core.trainer import (
    LongrunTrainer,
    MidrunTrainer,
    ShortrunTrainer,
    TrainConfig,
    add_data_noise,
    ml_gradient,
    train_longrun,
    train_midrun,
    train_shortrun,
)

TRAINERS = {
    Regime.SHORTRUN: ShortrunTrainer,
    Regime.MIDRUN: MidrunTrainer,
    Regime.LONGRUN: LongrunTrainer,
}


def _without_wall_time(rows):
    return [{k: v for k, v in row.items() if k != "wall_ms"} for row in rows]


class TestMlGradient:
    """Test suite for the contrastive gradient"""

    def test_matches_finite_differences(self, small_energy):
        """Test against central differences of mean U(pos) - mean U(neg)"""
        model = small_energy(2, seed=3)
        rng = np.random.default_rng(0)
        pos, neg = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        grads = ml_gradient(model, pos, neg)
        h = 1e-5
        params = model.params
        for i, p in enumerate(params):
            numeric = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                plus = [q.copy() for q in params]
                minus = [q.copy() for q in params]
                plus[i][idx] += h
                minus[i][idx] -= h

                def objective(candidate):
                    return np.mean(energy(candidate, pos)) - np.mean(energy(candidate, neg))

                numeric[idx] = (objective(model.with_params(plus)) - objective(model.with_params(minus))) / (2 * h)
            # entries that vanish analytically come back as rounding noise near 1e-12
            np.testing.assert_allclose(grads[i], numeric, rtol=1e-4, atol=1e-9)

    def test_equal_batches_cancel(self, small_energy):
        """Test identical positive and negative batches give a zero gradient"""
        model = small_energy(1)
        batch = np.linspace(-1.0, 1.0, 5)[:, None]
        for g in ml_gradient(model, batch, batch):
            np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_batch_errors(self, small_energy):
        """Test empty and mismatched batches"""
        model = small_energy(1)
        with pytest.raises(ValueError):
            ml_gradient(model, np.zeros((0, 1)), np.zeros((0, 1)))
        with pytest.raises(ShapeError):
            ml_gradient(model, np.zeros((3, 1)), np.zeros((4, 1)))

    def test_data_noise(self):
        """Test epsilon 0 copies and a negative epsilon is rejected"""
        batch = np.ones((3, 2))
        out = add_data_noise(batch, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out, batch)
        assert out is not batch
        with pytest.raises(ValueError):
            add_data_noise(batch, -1.0, np.random.default_rng(0))


class TestTrainConfig:
    """Test suite for TrainConfig validation"""

    def test_regime_defaults(self):
        """Test published defaults land in each regime"""
        short = TrainConfig.for_regime(Regime.SHORTRUN)
        assert short.mcmc_steps == 100
        assert short.rejuvenation_probability == 0.5
        assert short.max_update_rounds == 2
        long = TrainConfig.for_regime(Regime.LONGRUN)
        assert long.burn_in_threshold == 750
        assert long.burn_in_steps == long.mcmc_steps
        assert long.sigma == 0.15

    def test_midrun_rejuvenation_rate(self):
        """Test midrun derives p = K / K_def"""
        cfg = TrainConfig.for_regime(Regime.MIDRUN)
        assert cfg.rejuvenation_probability == pytest.approx(100 / 2000)

    def test_midrun_rate_above_one(self):
        """Test K > K_def is rejected"""
        with pytest.raises(ValidationError):
            TrainConfig.for_regime(Regime.MIDRUN, mcmc_steps=100, defense_steps=50)

    def test_explicit_rate_wins(self):
        """Test an explicit probability overrides K / K_def"""
        assert TrainConfig.for_regime(Regime.MIDRUN, rejuvenation_probability=0.3).rejuvenation_probability == 0.3

    def test_batch_above_bank(self):
        """Test a batch larger than the bank is rejected"""
        with pytest.raises(ValidationError):
            TrainConfig.for_regime(Regime.MIDRUN, batch_size=100, bank_size=50)

    def test_regime_rules(self):
        """Test shortrun needs its generator; midrun and longrun never clip"""
        with pytest.raises(ValidationError):
            TrainConfig.for_regime(Regime.SHORTRUN, rejuvenation_source="noise")
        with pytest.raises(ValidationError):
            TrainConfig.for_regime(Regime.LONGRUN, grad_clip=1.0)

    def test_schedule_coercion(self):
        """Test floats and pair lists both become schedules"""
        cfg = TrainConfig.for_regime(Regime.LONGRUN, lr_schedule=[(1e-3, 0), (1e-4, 10)])
        assert cfg.lr_schedule.points == ((1e-3, 0), (1e-4, 10))
        assert TrainConfig.for_regime(Regime.LONGRUN, lr_schedule=0.01).lr_schedule.points == ((0.01, 0),)

    def test_unknown_field(self):
        """Test misspelled fields are rejected"""
        with pytest.raises(ValidationError):
            TrainConfig.for_regime(Regime.MIDRUN, bank_sizes=10)


class TestLoops:
    """Test suite for round structure, bookkeeping and determinism"""

    EXPECTED_EVENTS = {
        Regime.SHORTRUN: ["select_data", "draw", "langevin", "ebm_update", "generator_update", "return", "rejuvenate"],
        Regime.MIDRUN: ["select_data", "draw", "langevin", "ebm_update", "return", "rejuvenate"],
        Regime.LONGRUN: ["select_data", "draw", "langevin", "gradient_source", "ebm_update", "return", "promote"],
    }

    def _trainer(self, regime, small_config, dataset, seed=0, events=None, **overrides):
        return TRAINERS[regime](small_config(regime, **overrides), dataset, RngStream(seed), events)

    @pytest.mark.parametrize("regime", list(Regime))
    def test_round_order(self, regime, small_config, small_energy, dataset):
        """Test one iteration performs its phases in order"""
        events = []
        trainer = self._trainer(regime, small_config, dataset, events=events)
        state = trainer.init_state(small_energy())
        trainer.step(state)
        assert [name for name, _ in events] == self.EXPECTED_EVENTS[regime]
        assert state.step == 1

    @pytest.mark.parametrize("regime", list(Regime))
    def test_deterministic(self, regime, small_config, small_energy, dataset):
        """Test the same seed reproduces every metric and parameter"""
        runs = []
        for _ in range(2):
            trainer = self._trainer(regime, small_config, dataset, seed=5)
            runs.append(trainer.run(trainer.init_state(small_energy())))
        a, b = runs
        assert _without_wall_time(a.metrics) == _without_wall_time(b.metrics)
        for p, q in zip(a.ebm.params, b.ebm.params):
            np.testing.assert_array_equal(p, q)

    @pytest.mark.parametrize("regime", list(Regime))
    def test_metrics_rows(self, regime, small_config, small_energy, dataset):
        """Test rows carry exactly the metrics columns, every metrics_every steps and the last"""
        trainer = self._trainer(regime, small_config, dataset, metrics_every=5)
        state = trainer.run(trainer.init_state(small_energy()))
        assert [row["step"] for row in state.metrics] == [0, 5, 10, 11]
        for row in state.metrics:
            assert tuple(row) == Config.METRICS_COLUMNS
            assert np.isfinite(row["grad_norm"])

    def test_seed_changes_run(self, small_config, small_energy, dataset):
        """Test different seeds give different trajectories"""
        finals = []
        for seed in (1, 2):
            trainer = self._trainer(Regime.MIDRUN, small_config, dataset, seed=seed)
            finals.append(trainer.run(trainer.init_state(small_energy())).metrics[-1]["mean_neg_energy"])
        assert finals[0] != finals[1]

    def test_trainer_regime_mismatch(self, small_config, dataset):
        """Test a trainer refuses another regime's config"""
        with pytest.raises(ValueError):
            MidrunTrainer(small_config(Regime.LONGRUN), dataset, RngStream(0))

    def test_divergence_reports_step(self, small_config, small_energy, dataset):
        """Test a diverging chain raises NumericOverflowError tagged with the iteration"""
        trainer = self._trainer(Regime.MIDRUN, small_config, dataset, step_size=1e200)
        state = trainer.init_state(small_energy())
        with pytest.raises(NumericOverflowError) as info:
            trainer.step(state)
        assert info.value.step == 0
        assert info.value.chain is not None


class TestShortrun:
    """Test suite for the cooperative-persistent hybrid"""

    def test_pairs_and_update_rounds(self, small_config, small_energy, dataset):
        """Test no pair outlives max_update_rounds and the generator is trained"""
        trainer = ShortrunTrainer(small_config(Regime.SHORTRUN), dataset, RngStream(3))
        state = trainer.init_state(small_energy())
        initial = [p.copy() for p in state.generator.params]
        for _ in range(10):
            trainer.step(state)
            assert state.bank.update_rounds.max() <= trainer.cfg.max_update_rounds
        assert state.bank.latents.shape == (32, 1)
        assert any(not np.array_equal(a, b) for a, b in zip(initial, state.generator.params))

    def test_full_rejuvenation_is_pure_cooperative(self, small_config, small_energy, dataset):
        """Test p = 1 and w = 1 only ever draw pairs fresh from the generator"""
        cfg = small_config(Regime.SHORTRUN, rejuvenation_probability=1.0, max_update_rounds=1, generator_recenter=False)
        trainer = ShortrunTrainer(cfg, dataset, RngStream(8))
        state = trainer.init_state(small_energy())
        versions = [state.generator]
        for _ in range(10):
            bank = state.bank
            assert np.all(bank.update_rounds == 0)
            for version in np.unique(bank.generation):
                slots = bank.generation == version
                expected = generate(versions[version], bank.latents[slots])
                np.testing.assert_allclose(bank.images[slots], expected, rtol=0, atol=1e-12)
            trainer.step(state)
            versions.append(state.generator)
            assert state.metrics[-1]["rejuvenation_count"] == cfg.batch_size

    def test_wrapper(self, small_config, small_energy, dataset):
        """Test train_shortrun returns the energy, the generator and the metrics"""
        ebm, generator, metrics = train_shortrun(small_config(Regime.SHORTRUN), dataset, RngStream(0), ebm=small_energy())
        assert isinstance(ebm, MlpEnergy)
        assert isinstance(generator, Generator)
        assert len(metrics) == 12


class TestMidrun:
    """Test suite for the midrun loop"""

    def test_lifetimes_grow_by_k(self, small_config, small_energy, dataset):
        """Test drawn slots gain mcmc_steps of lifetime unless rejuvenated"""
        events = []
        cfg = small_config(Regime.MIDRUN, rejuvenation_probability=0.0)
        trainer = MidrunTrainer(cfg, dataset, RngStream(4), events)
        state = trainer.init_state(small_energy())
        trainer.step(state)
        drawn = dict(events)["draw"]
        assert np.all(state.bank.lifetimes[list(drawn)] == cfg.mcmc_steps)
        assert state.bank.lifetimes.sum() == cfg.mcmc_steps * cfg.batch_size

    def test_generator_source_required(self, small_config, small_energy, dataset):
        """Test generator rejuvenation without a frozen generator is rejected"""
        trainer = MidrunTrainer(small_config(Regime.MIDRUN, rejuvenation_source="generator"), dataset, RngStream(0))
        with pytest.raises(ValueError):
            trainer.init_state(small_energy())

    def test_finite_training_set(self, small_config, small_energy, dataset):
        """Test data_size draws a fixed training set once"""
        trainer = MidrunTrainer(small_config(Regime.MIDRUN, data_size=20), dataset, RngStream(0))
        state = trainer.init_state(small_energy())
        assert state.data.shape == (20, 1)

    def test_wrapper_with_noise(self, small_config, small_energy, dataset):
        """Test train_midrun with noise rejuvenation and no generator"""
        cfg = small_config(Regime.MIDRUN, rejuvenation_source="noise", noise_distribution="normal")
        model = train_midrun(cfg, dataset, None, RngStream(0), ebm=small_energy())
        assert isinstance(model, MlpEnergy)


class TestLongrun:
    """Test suite for the dual-bank loop"""

    def test_negatives_come_from_update_bank(self, small_config, small_energy, dataset):
        """Test the gradient uses the update-bank draw"""
        events = []
        trainer = LongrunTrainer(small_config(Regime.LONGRUN), dataset, RngStream(2), events)
        state = trainer.init_state(small_energy())
        trainer.step(state)
        log = dict(events)
        source, indices = log["gradient_source"]
        assert source == "update"
        assert indices == log["draw"][1]

    def test_prior_stays_frozen(self, small_config, small_energy, dataset):
        """Test training never changes the prior energy"""
        prior = small_energy(seed=9)
        before = [p.copy() for p in prior.params]
        model = train_longrun(small_config(Regime.LONGRUN), dataset, None, prior, RngStream(0), ebm=small_energy())
        assert isinstance(model, CompositeEnergy)
        for a, b in zip(before, model.prior.params):
            np.testing.assert_array_equal(a, b)
        assert model.sigma == 2.0

    def test_promotions_respect_gate(self, small_config, small_energy, dataset):
        """Test promotions happen and every promoted state passed burn-in"""
        trainer = LongrunTrainer(small_config(Regime.LONGRUN, total_steps=30), dataset, RngStream(6))
        state = trainer.run(trainer.init_state(small_energy()))
        assert state.dual.promotions > 0
        assert sum(row["promotion_count"] for row in state.metrics) == state.dual.promotions
        state.dual.check_update_bank()

    def test_rows_report_promotions_not_rejuvenations(self, small_config, small_energy, dataset):
        """Test longrun rows count promotions only"""
        trainer = LongrunTrainer(small_config(Regime.LONGRUN, total_steps=30), dataset, RngStream(6))
        state = trainer.run(trainer.init_state(small_energy()))
        assert sum(row["promotion_count"] for row in state.metrics) > 0
        assert all(row["rejuvenation_count"] == 0 for row in state.metrics)
