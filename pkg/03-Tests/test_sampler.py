"""
Unit tests for the Langevin sampler.
"""
import numpy as np
import pytest

from ebmlife.core.autodiff import init_dense_net
from ebmlife.core.energies import DoubleWellEnergy, MlpEnergy, QuadraticEnergy
from ebmlife.core.errors import NumericOverflowError, ShapeError
from ebmlife.core.metrics import GridSpec, empirical_pmf, grid_boltzmann, kl_divergence
from ebmlife.core.rng import RngStream
from ebmlife.core.sampler import LangevinConfig, langevin_run, langevin_step, noise_disabled


class TestLangevinStep:
    """Test suite for a single Langevin update"""

    def test_update_formula(self):
        """Test x - (eta^2/2) T grad U + eta z with given noise"""
        x = np.array([[1.0, -2.0]])
        z = np.array([[0.5, 0.25]])
        out = langevin_step(QuadraticEnergy(), x, step_size=0.1, temperature=2.0, noise=z)
        np.testing.assert_allclose(out, x - 0.01 * x + 0.1 * z)

    def test_single_state(self):
        """Test a (d,) state comes back as (d,)"""
        out = langevin_step(QuadraticEnergy(), np.ones(3), 0.1, 1.0, gen=np.random.default_rng(0))
        assert out.shape == (3,)

    def test_noise_disabled_is_gradient_descent(self):
        """Test the drift-only hook removes the noise term"""
        with noise_disabled():
            out = langevin_step(DoubleWellEnergy(), np.array([2.0]), 0.1, 1.0)
        assert out[0] == pytest.approx(2.0 - 0.005 * 6.0)

    def test_needs_noise_source(self):
        """Test a missing generator and noise raises ValueError"""
        with pytest.raises(ValueError):
            langevin_step(QuadraticEnergy(), np.ones(2), 0.1, 1.0)

    def test_overflow_names_chain(self):
        """Test a non-finite row raises NumericOverflowError with its index"""
        x = np.array([[0.0], [1e306]])
        with pytest.raises(NumericOverflowError) as info:
            langevin_step(QuadraticEnergy(), x, 100.0, 1.0, noise=np.zeros((2, 1)))
        assert info.value.chain == 1


class TestLangevinRun:
    """Test suite for batched Langevin runs"""

    def test_zero_steps_returns_initial_state(self):
        """Test K = 0 returns x0 and records it once"""
        x0 = np.array([[0.3], [-0.7]])
        traj = langevin_run(QuadraticEnergy(), x0, LangevinConfig(step_size=0.1, num_steps=0), RngStream(0))
        np.testing.assert_array_equal(traj.final_state, x0)
        assert traj.steps_taken == 0
        np.testing.assert_array_equal(traj.recorded_steps, [0])

    def test_record_every(self):
        """Test recorded steps include 0, each multiple and K"""
        cfg = LangevinConfig(step_size=0.1, num_steps=10, record_every=4)
        traj = langevin_run(QuadraticEnergy(), np.zeros((3, 2)), cfg, RngStream(1))
        np.testing.assert_array_equal(traj.recorded_steps, [0, 4, 8, 10])
        assert traj.recorded_states.shape == (4, 3, 2)
        assert traj.recorded_energies.shape == (4, 3)
        np.testing.assert_array_equal(traj.recorded_states[-1], traj.final_state)

    def test_reproducible(self):
        """Test the same stream gives identical trajectories"""
        cfg = LangevinConfig(step_size=0.1, num_steps=300)
        a = langevin_run(DoubleWellEnergy(), np.zeros((4, 1)), cfg, RngStream(5).child("run"))
        b = langevin_run(DoubleWellEnergy(), np.zeros((4, 1)), cfg, RngStream(5).child("run"))
        np.testing.assert_array_equal(a.final_state, b.final_state)

    def test_chains_independent_of_batch_order(self):
        """Test a rowwise energy gives each slot the same path in any batch"""
        cfg = LangevinConfig(step_size=0.1, num_steps=300)
        rng = RngStream(11).child("run")
        x0 = np.linspace(-1.0, 1.0, 4)[:, None]
        full = langevin_run(DoubleWellEnergy(), x0, cfg, rng)
        subset = langevin_run(DoubleWellEnergy(), x0[[2, 0]], cfg, rng, slots=[2, 0])
        np.testing.assert_array_equal(subset.final_state, full.final_state[[2, 0]])

    def test_network_chains_agree_across_batch_sizes(self):
        """Test chains on a network energy match single-chain runs up to reassociation"""
        net = init_dense_net([2, 32, 32, 1], np.random.default_rng(3))
        model = MlpEnergy(net)
        cfg = LangevinConfig(step_size=0.05, num_steps=300)
        rng = RngStream(19).child("run")
        x0 = np.random.default_rng(4).normal(size=(64, 2))
        batched = langevin_run(model, x0, cfg, rng).final_state
        for b in (0, 17, 63):
            alone = langevin_run(model, x0[b:b + 1], cfg, rng, slots=[b]).final_state[0]
            np.testing.assert_allclose(alone, batched[b], rtol=0, atol=1e-10)

    def test_chain_view(self):
        """Test Trajectory.chain slices one slot"""
        cfg = LangevinConfig(step_size=0.1, num_steps=5)
        traj = langevin_run(QuadraticEnergy(), np.zeros((3, 2)), cfg, RngStream(2))
        one = traj.chain(1)
        np.testing.assert_array_equal(one.final_state, traj.final_state[1])
        assert one.recorded_states.shape == (2, 2)
        assert len(traj) == 3

    def test_empty_batch_rejected(self):
        """Test an empty batch raises ShapeError"""
        with pytest.raises(ShapeError):
            langevin_run(QuadraticEnergy(), np.zeros((0, 2)), LangevinConfig(step_size=0.1, num_steps=1), RngStream(0))

    def test_slot_count_mismatch(self):
        """Test slot labels must match the batch"""
        with pytest.raises(ShapeError):
            langevin_run(
                QuadraticEnergy(), np.zeros((2, 1)), LangevinConfig(step_size=0.1, num_steps=1), RngStream(0), slots=[0]
            )

    def test_divergence_reports_slot_label(self):
        """Test a diverging chain is reported by its slot label"""
        x0 = np.array([[0.0], [1e306]])
        cfg = LangevinConfig(step_size=100.0, num_steps=3)
        with pytest.raises(NumericOverflowError) as info:
            langevin_run(QuadraticEnergy(), x0, cfg, RngStream(0), slots=[5, 9])
        assert info.value.chain == 9

    @pytest.mark.slow
    @pytest.mark.parametrize("temperature", [1.0, 4.0])
    def test_stationary_variance_of_gaussian(self, temperature):
        """Test chains on ||x||^2/2 settle at variance 1 / (T (1 - eta^2 T / 4))"""
        eta = 0.1
        cfg = LangevinConfig(step_size=eta, num_steps=2000, temperature=temperature)
        traj = langevin_run(QuadraticEnergy(), np.zeros((50000, 1)), cfg, RngStream(2024))
        expected = 1.0 / (temperature * (1.0 - eta * eta * temperature / 4.0))
        assert np.var(traj.final_state) == pytest.approx(expected, rel=0.02)

    @pytest.mark.slow
    def test_double_well_matches_grid_oracle(self):
        """Test pooled chain states on the double well agree with its grid Boltzmann pmf"""
        cfg = LangevinConfig(step_size=0.05, num_steps=100000, record_every=10000)
        x0 = np.random.default_rng(0).uniform(-2.0, 2.0, size=(512, 1))
        traj = langevin_run(DoubleWellEnergy(1), x0, cfg, RngStream(77).child("oracle"))
        pooled = traj.recorded_states[1:].reshape(-1, 1)
        grid = GridSpec.box(-2.5, 2.5, 40)
        kl = kl_divergence(empirical_pmf(pooled, grid), grid_boltzmann(DoubleWellEnergy(1), grid))
        assert kl <= 0.05
