"""
Maximum-likelihood EBM learning and the three training loops.

ShortrunTrainer  - cooperative-persistent hybrid (paired latent/image bank, learned generator)
MidrunTrainer    - persistent bank rejuvenated from a frozen source with p = K / K_def
LongrunTrainer   - burn-in bank feeding an update bank; prior-composed energy
"""
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .autodiff import init_dense_net, tree_norm
from .banks import DataSource, DualBank, GeneratorSource, NoiseSource, PairedBank, PersistentBank, RejuvenationSource
from .config import REGIME_DEFAULTS, Activation, Config, Regime, RejuvenationKind
from .datasets import ToyDataset
from .energies import EnergyModel, MlpEnergy, Temperature, ZeroEnergy, compose_with_prior
from .errors import NumericOverflowError, ShapeError
from .generator import Generator, cooperative_grad, cooperative_loss
from .metrics import batch_diversity
from .optim import AnnealSchedule, OptimizerState, adam_step, clip_gradients, lr_at
from .rng import RngStream
from .sampler import LangevinConfig, langevin_run

logger = logging.getLogger(__name__)

Event = Tuple[str, Any]


def ml_gradient(model: EnergyModel, pos_batch: np.ndarray, neg_batch: np.ndarray) -> List[np.ndarray]:
    """
    Contrastive gradient (1/n) sum grad U(pos) - (1/n) sum grad U(neg).

    Raises:
        ValueError: If a batch is empty
        ShapeError: If the batches differ in shape
    """
    pos = np.asarray(pos_batch, dtype=np.float64)
    neg = np.asarray(neg_batch, dtype=np.float64)
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise ValueError("ml_gradient needs non-empty batches")
    if pos.shape != neg.shape:
        raise ShapeError(f"positive batch {pos.shape} and negative batch {neg.shape} differ")
    n = pos.shape[0]
    grad_pos = model.param_grad(pos, np.full(n, 1.0 / n))
    grad_neg = model.param_grad(neg, np.full(n, -1.0 / n))
    return [a + b for a, b in zip(grad_pos, grad_neg)]


def add_data_noise(batch: np.ndarray, data_epsilon: float, gen: np.random.Generator) -> np.ndarray:
    """Add i.i.d. N(0, data_epsilon^2) to every coordinate"""
    if data_epsilon < 0:
        raise ValueError(f"data_epsilon must be >= 0, got {data_epsilon}")
    batch = np.array(batch, dtype=np.float64)
    if data_epsilon == 0:
        return batch
    return batch + data_epsilon * gen.standard_normal(batch.shape)


def default_energy(dim: int, gen: np.random.Generator, hidden: Sequence[int] = (64, 64),
                   activation: Activation = Activation.LEAKY_RELU) -> MlpEnergy:
    """Dense energy network d -> hidden -> 1"""
    return MlpEnergy(init_dense_net([dim, *hidden, 1], gen, activation=activation))


class TrainConfig(BaseModel):
    """Hyperparameters of one training run; see REGIME_DEFAULTS for the per-regime values"""
    model_config = ConfigDict(extra="forbid")

    regime: Regime
    total_steps: int = Field(ge=0)
    batch_size: int = Field(gt=0)
    mcmc_steps: int = Field(ge=0)
    step_size: float = Field(gt=0)
    temperature: Temperature
    data_epsilon: float = Field(default=0.0, ge=0)
    data_size: int = Field(default=0, ge=0, description="finite training set size; 0 draws fresh data")
    lr_schedule: AnnealSchedule = AnnealSchedule.constant(1e-4)
    grad_clip: float = Field(default=0.0, ge=0)
    bank_size: int = Field(gt=0)
    rejuvenation_probability: Optional[float] = Field(default=None, ge=0, le=1)
    rejuvenation_source: RejuvenationKind = RejuvenationKind.GENERATOR
    noise_distribution: Literal["uniform", "normal"] = "uniform"
    noise_scale: float = Field(default=1.0, gt=0)

    max_update_rounds: Optional[int] = Field(default=None, ge=1)
    generator_lr: float = Field(default=1e-4, gt=0)
    generator_grad_clip: float = Field(default=0.0, ge=0)
    generator_recenter: bool = False
    generator_hidden: Tuple[int, ...] = (32, 32)
    latent_dim: Optional[int] = Field(default=None, gt=0)

    defense_steps: Optional[int] = Field(default=None, gt=0)

    burn_in_threshold: Optional[int] = Field(default=None, ge=1)
    burn_in_size: Optional[int] = Field(default=None, gt=0)
    burn_in_steps: Optional[int] = Field(default=None, ge=0)
    sigma: Optional[float] = Field(default=None, gt=0)

    metrics_every: int = Field(default=1, ge=1)
    checkpoint_every: int = Field(default=0, ge=0)

    @field_validator("lr_schedule", mode="before")
    @classmethod
    def _coerce_schedule(cls, value):
        if isinstance(value, (int, float)):
            return AnnealSchedule.constant(float(value))
        if isinstance(value, (list, tuple)):
            return {"points": value}
        return value

    @model_validator(mode="after")
    def _check_regime(self) -> "TrainConfig":
        errors = []
        if self.regime == Regime.MIDRUN and self.rejuvenation_probability is None and self.defense_steps:
            if self.mcmc_steps > self.defense_steps:
                errors.append("mcmc_steps exceeds defense_steps, so p = K / K_def would exceed 1")
            else:
                self.rejuvenation_probability = self.mcmc_steps / self.defense_steps
        if self.batch_size > self.bank_size:
            errors.append(f"batch_size {self.batch_size} exceeds bank_size {self.bank_size}")

        if self.regime == Regime.SHORTRUN:
            if self.max_update_rounds is None:
                errors.append("shortrun requires max_update_rounds")
            if self.rejuvenation_source != RejuvenationKind.GENERATOR:
                errors.append("shortrun rejuvenates from its own generator")
        if self.regime in (Regime.SHORTRUN, Regime.MIDRUN) and self.rejuvenation_probability is None:
            errors.append(f"{self.regime.value} requires rejuvenation_probability")
        if self.regime in (Regime.MIDRUN, Regime.LONGRUN) and self.grad_clip != 0:
            errors.append(f"{self.regime.value} does not clip gradients; grad_clip must be 0")
        if self.regime == Regime.LONGRUN:
            for name in ("burn_in_threshold", "burn_in_size", "sigma"):
                if getattr(self, name) is None:
                    errors.append(f"longrun requires {name}")
            if self.burn_in_steps is None:
                self.burn_in_steps = self.mcmc_steps
            if self.burn_in_size is not None and self.batch_size > self.burn_in_size:
                errors.append(f"batch_size {self.batch_size} exceeds burn_in_size {self.burn_in_size}")
        if errors:
            raise ValueError("; ".join(errors))
        return self

    @classmethod
    def for_regime(cls, regime: Regime, **overrides) -> "TrainConfig":
        """Regime defaults with `overrides` applied (None values are ignored)"""
        regime = Regime(regime)
        data = dict(REGIME_DEFAULTS[regime])
        data.update({k: v for k, v in overrides.items() if v is not None})
        data["regime"] = regime
        return cls(**data)

    @property
    def langevin(self) -> LangevinConfig:
        return LangevinConfig(step_size=self.step_size, num_steps=self.mcmc_steps, temperature=self.temperature)

    @property
    def burn_in_langevin(self) -> LangevinConfig:
        return LangevinConfig(step_size=self.step_size, num_steps=self.burn_in_steps or 0, temperature=self.temperature)


@dataclass(eq=False)
class TrainState:
    """
    Everything a training loop mutates; checkpoints serialize exactly this.

    `ebm` is the full sampled energy (the composite energy for longrun runs).
    """
    step: int
    ebm: EnergyModel
    ebm_opt: OptimizerState
    bank: Optional[PersistentBank] = None
    dual: Optional[DualBank] = None
    generator: Optional[Generator] = None
    generator_opt: Optional[OptimizerState] = None
    source_generator: Optional[Generator] = None
    data: Optional[np.ndarray] = None
    metrics: List[Dict[str, float]] = field(default_factory=list)


class BaseTrainer(ABC):
    """
    Shared loop mechanics: positive batches, EBM updates, metrics and stepping.

    Args:
        cfg: Training configuration for this trainer's regime
        dataset: Toy dataset supplying positive samples
        rng: Root stream of the run
        events: Optional list receiving (name, detail) tuples in execution order
    """

    regime: Regime

    def __init__(self, cfg: TrainConfig, dataset: ToyDataset, rng: RngStream, events: Optional[List[Event]] = None):
        if cfg.regime != self.regime:
            raise ValueError(f"{type(self).__name__} needs a {self.regime.value} config, got {cfg.regime.value}")
        self.cfg = cfg
        self.dataset = dataset
        self.rng = rng
        self.events = events

    def _event(self, name: str, detail: Any = None) -> None:
        if self.events is not None:
            self.events.append((name, detail))

    def _training_set(self) -> Optional[np.ndarray]:
        if self.cfg.data_size == 0:
            return None
        return self.dataset.sample(self.cfg.data_size, self.rng.child("dataset").generator())

    def _source(self, state: TrainState) -> RejuvenationSource:
        kind = self.cfg.rejuvenation_source
        if kind == RejuvenationKind.GENERATOR:
            if state.source_generator is None:
                raise ValueError(f"{self.regime.value} rejuvenation from a generator needs a frozen generator")
            return GeneratorSource(state.source_generator)
        if kind == RejuvenationKind.DATA:
            return DataSource(self.dataset)
        return NoiseSource(self.dataset.dim, self.cfg.noise_distribution, self.cfg.noise_scale)

    def _positive_batch(self, state: TrainState, t: int) -> np.ndarray:
        gen = self.rng.child("data").generator(counter=t)
        if state.data is not None:
            # uniform with replacement over the finite training set
            batch = state.data[gen.integers(0, len(state.data), size=self.cfg.batch_size)]
        else:
            batch = self.dataset.sample(self.cfg.batch_size, gen)
        self._event("select_data", self.cfg.batch_size)
        return add_data_noise(batch, self.cfg.data_epsilon, gen)

    def _ebm_update(self, state: TrainState, pos: np.ndarray, neg: np.ndarray, t: int, clip: float) -> Tuple[float, float]:
        grads = ml_gradient(state.ebm, pos, neg)
        norm = tree_norm(grads)
        lr = lr_at(self.cfg.lr_schedule, t)
        params = adam_step(state.ebm_opt, state.ebm.params, clip_gradients(grads, clip), lr)
        state.ebm = state.ebm.with_params(params)
        self._event("ebm_update", t)
        return lr, norm

    @staticmethod
    def _energy_row(state: TrainState, pos: np.ndarray, neg_energies: np.ndarray) -> Dict[str, float]:
        return {
            "mean_pos_energy": float(np.mean(state.ebm.energy(pos))),
            "mean_neg_energy": float(np.mean(neg_energies)),
        }

    @abstractmethod
    def _round(self, state: TrainState, t: int) -> Dict[str, float]:
        """One training iteration; returns the metric fields it measured"""
        pass

    def step(self, state: TrainState) -> TrainState:
        """
        Run one iteration and append its metrics row.

        Raises:
            NumericOverflowError: With `step` set to the failing iteration
        """
        t = state.step
        started = time.perf_counter()
        try:
            row = self._round(state, t)
        except NumericOverflowError as exc:
            exc.step = t
            logger.error(f"{self.regime.value} training diverged: {exc}")
            raise
        state.step = t + 1
        if t % self.cfg.metrics_every == 0 or state.step == self.cfg.total_steps:
            row.update(step=t, wall_ms=1000.0 * (time.perf_counter() - started))
            row = {column: row.get(column, 0) for column in Config.METRICS_COLUMNS}
            state.metrics.append(row)
            logger.info(
                f"[{self.regime.value}] step {t} lr={row['lr']:.2e} "
                f"E+={row['mean_pos_energy']:.4f} E-={row['mean_neg_energy']:.4f} |g|={row['grad_norm']:.4f}"
            )
        return state

    def run(self, state: TrainState, on_checkpoint=None) -> TrainState:
        """Step until cfg.total_steps; `on_checkpoint(state)` fires every checkpoint_every steps"""
        while state.step < self.cfg.total_steps:
            self.step(state)
            if on_checkpoint is not None and self.cfg.checkpoint_every and state.step % self.cfg.checkpoint_every == 0:
                on_checkpoint(state)
        return state


class ShortrunTrainer(BaseTrainer):
    """Cooperative-persistent hybrid: EBM and generator trained together over a paired bank"""

    regime = Regime.SHORTRUN

    def init_state(self, ebm: Optional[EnergyModel] = None, generator: Optional[Generator] = None) -> TrainState:
        dim = self.dataset.dim
        if ebm is None:
            ebm = default_energy(dim, self.rng.child("init-ebm").generator())
        if generator is None:
            latent_dim = self.cfg.latent_dim or dim
            generator = Generator(init_dense_net(
                [latent_dim, *self.cfg.generator_hidden, dim],
                self.rng.child("init-generator").generator(),
                recenter=self.cfg.generator_recenter,
            ))
        bank = PairedBank.initialize(GeneratorSource(generator), self.cfg.bank_size, self.rng.child("init-bank").generator())
        return TrainState(
            step=0,
            ebm=ebm,
            ebm_opt=OptimizerState.zeros_like(ebm.params),
            bank=bank,
            generator=generator,
            generator_opt=OptimizerState.zeros_like(generator.params),
            data=self._training_set(),
        )

    def _round(self, state: TrainState, t: int) -> Dict[str, float]:
        cfg = self.cfg
        pos = self._positive_batch(state, t)

        idx, latents, x0 = state.bank.draw_batch(cfg.batch_size, self.rng.child("draw").generator(counter=t))
        self._event("draw", tuple(int(i) for i in idx))

        traj = langevin_run(state.ebm, x0, cfg.langevin, self.rng.child("langevin", t), slots=idx)
        neg = traj.final_state
        self._event("langevin", cfg.mcmc_steps)

        row = self._energy_row(state, pos, traj.recorded_energies[-1])
        lr, norm = self._ebm_update(state, pos, neg, t, cfg.grad_clip)

        gen_grads = clip_gradients(cooperative_grad(state.generator, latents, neg), cfg.generator_grad_clip)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"step {t} cooperative loss {cooperative_loss(state.generator, latents, neg):.6f}")
        state.generator = state.generator.with_params(
            adam_step(state.generator_opt, state.generator.params, gen_grads, cfg.generator_lr)
        )
        self._event("generator_update", t)

        state.bank.return_batch(idx, neg, cfg.mcmc_steps)
        self._event("return", tuple(int(i) for i in idx))

        rejuvenated = state.bank.rejuvenate(
            idx,
            GeneratorSource(state.generator),
            cfg.rejuvenation_probability,
            self.rng.child("rejuvenate").generator(counter=t),
            max_update_rounds=cfg.max_update_rounds,
            generation=t + 1,
        )
        self._event("rejuvenate", rejuvenated)

        row.update(
            lr=lr,
            grad_norm=norm,
            diversity=batch_diversity(neg) if len(neg) > 1 else 0.0,
            rejuvenation_count=rejuvenated,
            promotion_count=0,
        )
        return row


class MidrunTrainer(BaseTrainer):
    """Persistent bank refilled from a frozen source; learning rate follows the schedule"""

    regime = Regime.MIDRUN

    def init_state(self, ebm: Optional[EnergyModel] = None, source_generator: Optional[Generator] = None) -> TrainState:
        if ebm is None:
            ebm = default_energy(self.dataset.dim, self.rng.child("init-ebm").generator())
        state = TrainState(
            step=0,
            ebm=ebm,
            ebm_opt=OptimizerState.zeros_like(ebm.params),
            source_generator=source_generator,
            data=self._training_set(),
        )
        state.bank = PersistentBank.initialize(self._source(state), self.cfg.bank_size, self.rng.child("init-bank").generator())
        return state

    def _round(self, state: TrainState, t: int) -> Dict[str, float]:
        cfg = self.cfg
        pos = self._positive_batch(state, t)

        idx, x0 = state.bank.draw_batch(cfg.batch_size, self.rng.child("draw").generator(counter=t))
        self._event("draw", tuple(int(i) for i in idx))

        traj = langevin_run(state.ebm, x0, cfg.langevin, self.rng.child("langevin", t), slots=idx)
        neg = traj.final_state
        self._event("langevin", cfg.mcmc_steps)

        row = self._energy_row(state, pos, traj.recorded_energies[-1])
        lr, norm = self._ebm_update(state, pos, neg, t, 0.0)

        state.bank.return_batch(idx, neg, cfg.mcmc_steps)
        self._event("return", tuple(int(i) for i in idx))

        rejuvenated = state.bank.rejuvenate(
            idx, self._source(state), cfg.rejuvenation_probability, self.rng.child("rejuvenate").generator(counter=t)
        )
        self._event("rejuvenate", rejuvenated)

        row.update(
            lr=lr,
            grad_norm=norm,
            diversity=batch_diversity(neg) if len(neg) > 1 else 0.0,
            rejuvenation_count=rejuvenated,
            promotion_count=0,
        )
        return row


class LongrunTrainer(BaseTrainer):
    """Dual-bank training of a prior-composed energy; gradients use update-bank negatives only"""

    regime = Regime.LONGRUN

    def init_state(
        self,
        ebm: Optional[EnergyModel] = None,
        source_generator: Optional[Generator] = None,
        prior: Optional[EnergyModel] = None,
    ) -> TrainState:
        """
        Args:
            ebm: Trainable part of the energy (a default network when omitted)
            source_generator: Frozen generator for bank filling and rejuvenation
            prior: Frozen prior energy (zero energy when omitted)
        """
        dim = self.dataset.dim
        if ebm is None:
            ebm = default_energy(dim, self.rng.child("init-ebm").generator())
        model = compose_with_prior(ebm, prior if prior is not None else ZeroEnergy(dim), self.cfg.sigma)
        state = TrainState(
            step=0,
            ebm=model,
            ebm_opt=OptimizerState.zeros_like(model.params),
            source_generator=source_generator,
            data=self._training_set(),
        )
        state.dual = DualBank.initialize(
            self._source(state),
            self.cfg.burn_in_size,
            self.cfg.bank_size,
            self.cfg.burn_in_threshold,
            self.cfg.burn_in_steps,
            self.rng.child("init-bank").generator(),
        )
        return state

    def _round(self, state: TrainState, t: int) -> Dict[str, float]:
        cfg = self.cfg
        dual = state.dual
        pos = self._positive_batch(state, t)

        draw_gen = self.rng.child("draw").generator(counter=t)
        burn_idx, burn_x0 = dual.burn_in.draw_batch(cfg.batch_size, draw_gen)
        upd_idx, upd_x0 = dual.update.draw_batch(cfg.batch_size, draw_gen)
        self._event("draw", (tuple(int(i) for i in burn_idx), tuple(int(i) for i in upd_idx)))

        traj = langevin_run(state.ebm, upd_x0, cfg.langevin, self.rng.child("langevin", t), slots=upd_idx)
        neg = traj.final_state
        burn = langevin_run(
            state.ebm, burn_x0, cfg.burn_in_langevin, self.rng.child("burn-in-langevin", t), slots=burn_idx
        ).final_state
        self._event("langevin", (cfg.mcmc_steps, cfg.burn_in_steps))

        self._event("gradient_source", ("update", tuple(int(i) for i in upd_idx)))
        row = self._energy_row(state, pos, traj.recorded_energies[-1])
        lr, norm = self._ebm_update(state, pos, neg, t, 0.0)

        dual.update.return_batch(upd_idx, neg, cfg.mcmc_steps)
        dual.return_burn_in(burn_idx, burn, cfg.burn_in_steps)
        self._event("return", (tuple(int(i) for i in burn_idx), tuple(int(i) for i in upd_idx)))

        promoted = dual.promote(burn_idx, self._source(state), self.rng.child("promote").generator(counter=t))
        self._event("promote", promoted)

        row.update(
            lr=lr,
            grad_norm=norm,
            diversity=batch_diversity(neg) if len(neg) > 1 else 0.0,
            rejuvenation_count=0,
            promotion_count=promoted,
        )
        return row


def train_shortrun(
    cfg: TrainConfig,
    dataset: ToyDataset,
    rng: RngStream,
    ebm: Optional[EnergyModel] = None,
    generator: Optional[Generator] = None,
    events: Optional[List[Event]] = None,
) -> Tuple[EnergyModel, Generator, List[Dict[str, float]]]:
    """Run the hybrid loop for cfg.total_steps; returns (ebm, generator, metrics)"""
    trainer = ShortrunTrainer(cfg, dataset, rng, events)
    state = trainer.run(trainer.init_state(ebm, generator))
    return state.ebm, state.generator, state.metrics


def train_midrun(
    cfg: TrainConfig,
    dataset: ToyDataset,
    frozen_generator: Optional[Generator],
    rng: RngStream,
    ebm: Optional[EnergyModel] = None,
    events: Optional[List[Event]] = None,
) -> EnergyModel:
    """Run the midrun loop; `frozen_generator` may be None for data or noise rejuvenation"""
    trainer = MidrunTrainer(cfg, dataset, rng, events)
    return trainer.run(trainer.init_state(ebm, frozen_generator)).ebm


def train_longrun(
    cfg: TrainConfig,
    dataset: ToyDataset,
    frozen_generator: Optional[Generator],
    prior_ebm: Optional[EnergyModel],
    rng: RngStream,
    ebm: Optional[EnergyModel] = None,
    events: Optional[List[Event]] = None,
) -> EnergyModel:
    """Run the longrun loop; returns the composite energy (trained part + frozen prior + Gaussian)"""
    trainer = LongrunTrainer(cfg, dataset, rng, events)
    return trainer.run(trainer.init_state(ebm, frozen_generator, prior_ebm)).ebm
