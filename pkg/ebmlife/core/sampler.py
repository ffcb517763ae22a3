"""
Langevin transition and batched trajectory runner.
Every training regime and the purification defense advance chains through here.
"""
import contextlib
import contextvars
import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .config import Config
from .energies import EnergyModel, Temperature
from .energies.base import as_state_batch
from .errors import NumericOverflowError, ShapeError
from .rng import RngStream

logger = logging.getLogger(__name__)

_NOISE_ENABLED: contextvars.ContextVar = contextvars.ContextVar("ebmlife_langevin_noise", default=True)


@contextlib.contextmanager
def noise_disabled() -> Iterator[None]:
    """Drift-only Langevin steps inside the block (test hook)"""
    token = _NOISE_ENABLED.set(False)
    try:
        yield
    finally:
        _NOISE_ENABLED.reset(token)


class LangevinConfig(BaseModel):
    """Step size, step count and temperature of a Langevin run"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    step_size: float = Field(gt=0, description="eta")
    num_steps: int = Field(ge=0, description="K")
    temperature: Temperature = 1.0
    record_every: int = Field(default=0, ge=0, description="0 records the endpoints only")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Result of a batched Langevin run.

    Attributes:
        final_state: (B, d)
        recorded_states: (R, B, d), always including step 0 and step K
        recorded_energies: (R, B), energy of each recorded state
        recorded_steps: (R,) step index of each record
        steps_taken: K
    """
    final_state: np.ndarray
    recorded_states: np.ndarray
    recorded_energies: np.ndarray
    recorded_steps: np.ndarray
    steps_taken: int

    def __len__(self) -> int:
        return self.final_state.shape[0]

    def chain(self, b: int) -> "Trajectory":
        """Single-chain view of slot b"""
        return Trajectory(
            final_state=self.final_state[b],
            recorded_states=self.recorded_states[:, b],
            recorded_energies=self.recorded_energies[:, b],
            recorded_steps=self.recorded_steps,
            steps_taken=self.steps_taken,
        )


def langevin_step(
    model: EnergyModel,
    x: np.ndarray,
    step_size: float,
    temperature: float,
    gen: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    One Langevin update x - (eta^2 / 2) * T * grad U(x) + eta * z.

    Args:
        model: Energy
        x: State (d,) or batch (B, d)
        step_size: eta > 0
        temperature: T > 0, scales the drift only
        gen: Source of z when `noise` is not given
        noise: Pre-drawn standard normal z with the shape of x

    Returns:
        Updated state(s); no clamping is applied

    Raises:
        NonFiniteInputError: If x is not finite
        NumericOverflowError: If the update is not finite (chain = batch row)
    """
    batch, single = as_state_batch(model, x)
    drift = (0.5 * step_size * step_size * temperature) * model.grad_x(batch)
    out = batch - drift
    if _NOISE_ENABLED.get():
        if noise is None:
            if gen is None:
                raise ValueError("langevin_step needs either a generator or pre-drawn noise")
            noise = gen.standard_normal(batch.shape)
        noise = np.asarray(noise, dtype=np.float64).reshape(batch.shape)
        out = out + step_size * noise

    finite_rows = np.all(np.isfinite(out), axis=1)
    if not np.all(finite_rows):
        raise NumericOverflowError("Langevin update left the finite range", chain=int(np.argmin(finite_rows)))
    return out[0] if single else out


def _record_steps(num_steps: int, record_every: int) -> np.ndarray:
    if record_every == 0 or num_steps == 0:
        steps = [0, num_steps] if num_steps else [0]
    else:
        steps = list(range(0, num_steps + 1, record_every))
        if steps[-1] != num_steps:
            steps.append(num_steps)
    return np.asarray(steps, dtype=np.int64)


def langevin_run(
    model: EnergyModel,
    x0_batch: np.ndarray,
    cfg: LangevinConfig,
    rng: RngStream,
    slots: Optional[Sequence[int]] = None,
) -> Trajectory:
    """
    Run K Langevin steps on every chain of a batch.

    Chain b draws its noise from rng.child(slots[b]). Its noise therefore depends
    only on (seed, stream, slot); its path is equal across batch orders and batch
    sizes up to floating-point reassociation in the energy gradient, and
    bit-identical for the same batch composition.

    Args:
        model: Energy
        x0_batch: Initial states (B, d), B >= 1
        cfg: Step size, K, temperature and recording interval
        rng: Stream for this run
        slots: Stream label per chain (defaults to 0..B-1); bank indices in trainers

    Raises:
        ShapeError: If the batch is empty or slots do not match it
        NumericOverflowError: With `chain` set to the offending slot label
    """
    x = np.array(x0_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"langevin_run needs a non-empty (B, d) batch, got {x.shape}")
    batch_size, dim = x.shape
    slots = np.arange(batch_size) if slots is None else np.asarray(slots, dtype=np.int64)
    if slots.shape != (batch_size,):
        raise ShapeError(f"{slots.shape[0]} slot labels for {batch_size} chains")

    record_at = _record_steps(cfg.num_steps, cfg.record_every)
    states = [x.copy()]
    energies = [model.energy(as_state_batch(model, x)[0])]
    next_record = 1

    keys = [rng.child(int(s)).key() for s in slots]
    chunk = Config.NOISE_CHUNK
    noise_block = None
    use_noise = _NOISE_ENABLED.get()

    try:
        for k in range(cfg.num_steps):
            offset = k % chunk
            if use_noise and offset == 0:
                length = min(chunk, cfg.num_steps - k)
                block_idx = k // chunk
                noise_block = np.stack([
                    np.random.Generator(np.random.Philox(key=key, counter=block_idx << 64)).standard_normal((length, dim))
                    for key in keys
                ])
            z = noise_block[:, offset, :] if use_noise else None
            x = langevin_step(model, x, cfg.step_size, cfg.temperature, noise=z)
            if next_record < len(record_at) and record_at[next_record] == k + 1:
                states.append(x.copy())
                energies.append(model.energy(x))
                next_record += 1
    except NumericOverflowError as exc:
        row = exc.chain if exc.chain is not None else 0
        raise NumericOverflowError(
            f"Langevin chain diverged at step {k + 1} of {cfg.num_steps}", chain=int(slots[row])
        ) from exc

    return Trajectory(
        final_state=x,
        recorded_states=np.stack(states),
        recorded_energies=np.stack(energies),
        recorded_steps=record_at,
        steps_taken=cfg.num_steps,
    )
