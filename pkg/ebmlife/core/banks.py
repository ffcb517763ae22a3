"""
Sample banks: persistent, paired latent-image and dual burn-in/update.
Banks hold MCMC states between training rounds; rejuvenation sources refill them.
"""
import logging
from abc import ABC, abstractmethod
from collections import deque
from enum import IntEnum
from typing import Deque, Dict, Optional, Sequence, Tuple

import numpy as np

from .config import Config, RejuvenationKind
from .errors import BankError, ShapeError
from .generator import Generator, generate

logger = logging.getLogger(__name__)


class Origin(IntEnum):
    """Provenance of a bank state"""
    INIT = 0  # filled at bank initialization
    REJUVENATED = 1  # refilled from a source after initialization


# ---------------------------------------------------------------------------
# Rejuvenation sources
# ---------------------------------------------------------------------------

class RejuvenationSource(ABC):
    """Where fresh bank states come from"""

    kind: RejuvenationKind

    @abstractmethod
    def draw(self, n: int, gen: np.random.Generator) -> np.ndarray:
        """Draw n i.i.d. states of shape (n, d)"""
        pass


class NoiseSource(RejuvenationSource):
    """Uniform noise on [-scale, scale]^d or Gaussian noise with std `scale`"""

    kind = RejuvenationKind.NOISE

    def __init__(self, dim: int, distribution: str = "uniform", scale: float = 1.0):
        if distribution not in ("uniform", "normal"):
            raise ValueError(f"noise distribution must be 'uniform' or 'normal', got {distribution}")
        if not scale > 0:
            raise ValueError(f"noise scale must be positive, got {scale}")
        self.dim = dim
        self.distribution = distribution
        self.scale = float(scale)

    def draw(self, n: int, gen: np.random.Generator) -> np.ndarray:
        if self.distribution == "uniform":
            return gen.uniform(-self.scale, self.scale, size=(n, self.dim))
        return self.scale * gen.standard_normal((n, self.dim))


class DataSource(RejuvenationSource):
    """Fresh draws from a dataset (anything with `sample(n, gen)`)"""

    kind = RejuvenationKind.DATA

    def __init__(self, dataset):
        self.dataset = dataset

    def draw(self, n: int, gen: np.random.Generator) -> np.ndarray:
        return self.dataset.sample(n, gen)


class GeneratorSource(RejuvenationSource):
    """Generator outputs g(z) for standard normal latents z"""

    kind = RejuvenationKind.GENERATOR

    def __init__(self, generator: Generator):
        self.generator = generator

    def draw_with_latents(self, n: int, gen: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        latents = gen.standard_normal((n, self.generator.latent_dim))
        return latents, generate(self.generator, latents)

    def draw(self, n: int, gen: np.random.Generator) -> np.ndarray:
        return self.draw_with_latents(n, gen)[1]


# ---------------------------------------------------------------------------
# Banks
# ---------------------------------------------------------------------------

def _check_probability(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"rejuvenation probability must be in [0, 1], got {p}")


class PersistentBank:
    """
    Fixed-capacity pool of chain states.

    Attributes:
        states: (N, d) current states
        lifetimes: Langevin steps each slot has accumulated since it was filled
        origin: Origin flag per slot
        rejuvenation_lifetimes: lifetimes at rejuvenation, most recent Config.LIFETIME_WINDOW events
        rejuvenation_events: rejuvenations since the bank was created
        lifetime_total: sum of every lifetime at rejuvenation since the bank was created
    """

    def __init__(self, states: np.ndarray, lifetimes: Optional[np.ndarray] = None, origin: Optional[np.ndarray] = None):
        states = np.array(states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] == 0:
            raise ShapeError(f"bank states must be a non-empty (N, d) array, got {states.shape}")
        n = states.shape[0]
        self.states = states
        self.lifetimes = np.zeros(n, dtype=np.int64) if lifetimes is None else np.array(lifetimes, dtype=np.int64)
        self.origin = np.full(n, Origin.INIT, dtype=np.int8) if origin is None else np.array(origin, dtype=np.int8)
        self.rejuvenation_lifetimes: Deque[int] = deque(maxlen=Config.LIFETIME_WINDOW)
        self.rejuvenation_events = 0
        self.lifetime_total = 0

    @classmethod
    def initialize(cls, source: RejuvenationSource, capacity: int, gen: np.random.Generator) -> "PersistentBank":
        """Fill every slot from `source`"""
        if capacity < 1:
            raise BankError(f"bank capacity must be positive, got {capacity}")
        return cls(source.draw(capacity, gen))

    @property
    def capacity(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def _sample_indices(self, batch_size: int, gen: np.random.Generator) -> np.ndarray:
        if not 1 <= batch_size <= self.capacity:
            raise BankError(f"cannot draw {batch_size} distinct slots from a bank of {self.capacity}")
        return gen.choice(self.capacity, size=batch_size, replace=False)

    def _check_indices(self, indices: Sequence[int], rows: Optional[int] = None) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 1:
            raise BankError("indices must be a flat list")
        if indices.size and (indices.min() < 0 or indices.max() >= self.capacity):
            raise BankError(f"slot index out of range for bank of {self.capacity}")
        if len(np.unique(indices)) != len(indices):
            raise BankError("duplicate slot indices in one batch")
        if rows is not None and rows != len(indices):
            raise BankError(f"{rows} states returned for {len(indices)} drawn slots")
        return indices

    def draw_batch(self, batch_size: int, gen: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """
        Draw distinct slots uniformly at random.

        Returns:
            (indices, copies of the states at those slots)

        Raises:
            BankError: If batch_size exceeds capacity
        """
        indices = self._sample_indices(batch_size, gen)
        return indices, self.states[indices].copy()

    def return_batch(self, indices: Sequence[int], states: np.ndarray, steps_added: int) -> None:
        """Overwrite the drawn slots and add `steps_added` to their lifetimes"""
        states = np.asarray(states, dtype=np.float64)
        indices = self._check_indices(indices, rows=states.shape[0])
        if states.ndim != 2 or states.shape[1] != self.dim:
            raise ShapeError(f"returned states {states.shape} do not match bank dimension {self.dim}")
        if steps_added < 0:
            raise BankError("steps_added must be non-negative")
        self.states[indices] = states
        self.lifetimes[indices] += steps_added

    @property
    def mean_rejuvenation_lifetime(self) -> float:
        """Mean lifetime over every rejuvenation, NaN before the first"""
        if self.rejuvenation_events == 0:
            return float("nan")
        return self.lifetime_total / self.rejuvenation_events

    def _record_lifetimes(self, values: np.ndarray) -> None:
        self.rejuvenation_lifetimes.extend(int(v) for v in values)
        self.rejuvenation_events += int(values.size)
        self.lifetime_total += int(values.sum())

    def _restore_lifetimes(self, arrays: Dict[str, np.ndarray]) -> None:
        window = np.asarray(arrays["rejuvenation_lifetimes"], dtype=np.int64)
        self.rejuvenation_lifetimes.extend(int(v) for v in window)
        if "lifetime_totals" in arrays:
            self.rejuvenation_events, self.lifetime_total = (int(v) for v in arrays["lifetime_totals"])
        else:
            self.rejuvenation_events, self.lifetime_total = int(window.size), int(window.sum())

    def _refill(self, indices: np.ndarray, fresh: np.ndarray) -> None:
        self._record_lifetimes(self.lifetimes[indices])
        self.states[indices] = fresh
        self.lifetimes[indices] = 0
        self.origin[indices] = Origin.REJUVENATED

    def rejuvenate(self, indices: Sequence[int], source: RejuvenationSource, p: float, gen: np.random.Generator) -> int:
        """
        Independently replace each listed slot with probability p.

        Returns:
            Number of slots rejuvenated
        """
        _check_probability(p)
        indices = self._check_indices(indices)
        chosen = indices[gen.random(len(indices)) < p]
        if len(chosen):
            self._refill(chosen, source.draw(len(chosen), gen))
        return int(len(chosen))

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {
            "states": self.states,
            "lifetimes": self.lifetimes,
            "origin": self.origin,
            "rejuvenation_lifetimes": np.asarray(self.rejuvenation_lifetimes, dtype=np.int64),
            "lifetime_totals": np.array([self.rejuvenation_events, self.lifetime_total], dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "PersistentBank":
        bank = cls(arrays["states"], arrays["lifetimes"], arrays["origin"])
        bank._restore_lifetimes(arrays)
        return bank


class PairedBank(PersistentBank):
    """
    Persistent bank whose image slot i is always paired with latent slot i.

    Images are produced by the generator from their latent and then evolved by
    Langevin; latents only change on rejuvenation.

    Attributes:
        latents: (N, m)
        update_rounds: draw/return rounds since the pair was generated
        generation: generator version that produced each pair
    """

    def __init__(
        self,
        latents: np.ndarray,
        images: np.ndarray,
        update_rounds: Optional[np.ndarray] = None,
        generation: Optional[np.ndarray] = None,
        lifetimes: Optional[np.ndarray] = None,
        origin: Optional[np.ndarray] = None,
    ):
        super().__init__(images, lifetimes, origin)
        latents = np.array(latents, dtype=np.float64)
        if latents.ndim != 2 or latents.shape[0] != self.capacity:
            raise ShapeError("latent bank and image bank must have the same number of slots")
        self.latents = latents
        n = self.capacity
        self.update_rounds = np.zeros(n, dtype=np.int64) if update_rounds is None else np.array(update_rounds, dtype=np.int64)
        self.generation = np.zeros(n, dtype=np.int64) if generation is None else np.array(generation, dtype=np.int64)

    @classmethod
    def initialize(cls, source: GeneratorSource, capacity: int, gen: np.random.Generator) -> "PairedBank":
        """Random latents and their generated images"""
        if not isinstance(source, GeneratorSource):
            raise BankError("a paired bank is filled from a generator source")
        if capacity < 1:
            raise BankError(f"bank capacity must be positive, got {capacity}")
        latents, images = source.draw_with_latents(capacity, gen)
        return cls(latents, images)

    @property
    def images(self) -> np.ndarray:
        return self.states

    def draw_batch(self, batch_size: int, gen: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Returns:
            (indices, latents, images) aligned row by row
        """
        indices = self._sample_indices(batch_size, gen)
        return indices, self.latents[indices].copy(), self.states[indices].copy()

    def return_batch(self, indices: Sequence[int], states: np.ndarray, steps_added: int) -> None:
        """Overwrite images, keep latents, count one more update round"""
        super().return_batch(indices, states, steps_added)
        self.update_rounds[np.asarray(indices, dtype=np.int64)] += 1

    def rejuvenate(
        self,
        indices: Sequence[int],
        source: RejuvenationSource,
        p: float,
        gen: np.random.Generator,
        max_update_rounds: Optional[int] = None,
        generation: int = 0,
    ) -> int:
        """
        Regenerate pairs: first the latent, then the image from it.

        Slots with update_rounds >= max_update_rounds are always regenerated;
        every listed slot is also independently regenerated with probability p.

        Returns:
            Number of pairs regenerated
        """
        _check_probability(p)
        if not isinstance(source, GeneratorSource):
            raise BankError("a paired bank is rejuvenated from a generator source")
        indices = self._check_indices(indices)
        mask = gen.random(len(indices)) < p
        if max_update_rounds is not None:
            mask |= self.update_rounds[indices] >= max_update_rounds
        chosen = indices[mask]
        if len(chosen):
            # one generator batch per pass; recentred layers depend on batch composition
            latents, images = source.draw_with_latents(len(indices), gen)
            self.latents[chosen] = latents[mask]
            self._refill(chosen, images[mask])
            self.update_rounds[chosen] = 0
            self.generation[chosen] = generation
        return int(len(chosen))

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = super().to_arrays()
        arrays.update(latents=self.latents, update_rounds=self.update_rounds, generation=self.generation)
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "PairedBank":
        bank = cls(
            arrays["latents"],
            arrays["states"],
            arrays["update_rounds"],
            arrays["generation"],
            arrays["lifetimes"],
            arrays["origin"],
        )
        bank._restore_lifetimes(arrays)
        return bank


class DualBank:
    """
    Burn-in bank feeding an update bank.

    A burn-in state moves to the update bank once it has survived `threshold`
    rounds; only update-bank states are used as learning negatives.

    Attributes:
        burn_in: bank of N1 states advanced every round
        update: bank of N2 states
        counts: rounds each burn-in slot has been updated
        threshold: D
        steps_per_round: Langevin steps a burn-in state gains per round
    """

    def __init__(
        self,
        burn_in: PersistentBank,
        update: PersistentBank,
        threshold: int,
        steps_per_round: int,
        counts: np.ndarray,
    ):
        if threshold < 1:
            raise BankError(f"promotion threshold must be positive, got {threshold}")
        counts = np.array(counts, dtype=np.int64)
        if counts.shape != (burn_in.capacity,):
            raise ShapeError("one count per burn-in slot is required")
        if burn_in.dim != update.dim:
            raise ShapeError("burn-in and update banks disagree on dimension")
        self.burn_in = burn_in
        self.update = update
        self.threshold = int(threshold)
        self.steps_per_round = int(steps_per_round)
        self.counts = counts
        self.promotions = 0

    @classmethod
    def initialize(
        cls,
        source: RejuvenationSource,
        burn_in_size: int,
        update_size: int,
        threshold: int,
        steps_per_round: int,
        gen: np.random.Generator,
    ) -> "DualBank":
        """Fill both banks from `source` and draw counts from Unif{0, ..., D}"""
        burn_in = PersistentBank.initialize(source, burn_in_size, gen)
        update = PersistentBank.initialize(source, update_size, gen)
        counts = gen.integers(0, threshold + 1, size=burn_in_size)
        return cls(burn_in, update, threshold, steps_per_round, counts)

    @property
    def gate_steps(self) -> int:
        """Lifetime a rejuvenated state needs before it may be promoted"""
        return self.threshold * self.steps_per_round

    def return_burn_in(self, indices: Sequence[int], states: np.ndarray, steps_added: int) -> None:
        """Return burn-in states and count one more round for each"""
        self.burn_in.return_batch(indices, states, steps_added)
        self.counts[np.asarray(indices, dtype=np.int64)] += 1

    def _check_gate(self, slot: int) -> None:
        if self.burn_in.origin[slot] == Origin.REJUVENATED and self.burn_in.lifetimes[slot] < self.gate_steps:
            raise BankError(
                f"burn-in slot {slot} reached the promotion count with only "
                f"{self.burn_in.lifetimes[slot]} of {self.gate_steps} required Langevin steps"
            )

    def promote(self, batch_indices: Sequence[int], source: RejuvenationSource, gen: np.random.Generator) -> int:
        """
        Move every listed burn-in state whose count reached D into the update bank.

        Each promotion overwrites one uniformly chosen update slot, then the
        burn-in slot is refilled from `source` and its count reset to 0.

        Returns:
            Number of promotions

        Raises:
            BankError: If a rejuvenated state would enter the update bank
                before accumulating threshold * steps_per_round steps
        """
        indices = self.burn_in._check_indices(batch_indices)
        ready = indices[self.counts[indices] >= self.threshold]
        for slot in ready:
            self._check_gate(int(slot))
            target = int(gen.integers(self.update.capacity))
            self.update.states[target] = self.burn_in.states[slot]
            self.update.lifetimes[target] = self.burn_in.lifetimes[slot]
            self.update.origin[target] = self.burn_in.origin[slot]
            logger.debug(f"Promoted burn-in slot {slot} into update slot {target}")
        if len(ready):
            self.burn_in._refill(ready, source.draw(len(ready), gen))
            self.counts[ready] = 0
        self.promotions += int(len(ready))
        return int(len(ready))

    def check_update_bank(self) -> None:
        """Assert the promotion gate over the whole update bank"""
        late = (self.update.origin == Origin.REJUVENATED) & (self.update.lifetimes < self.gate_steps)
        if np.any(late):
            raise BankError(f"update bank holds {int(late.sum())} states that skipped burn-in")

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f"burn_in/{k}": v for k, v in self.burn_in.to_arrays().items()}
        arrays.update({f"update/{k}": v for k, v in self.update.to_arrays().items()})
        arrays["counts"] = self.counts
        arrays["meta"] = np.array([self.threshold, self.steps_per_round, self.promotions], dtype=np.int64)
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "DualBank":
        def part(prefix: str) -> Dict[str, np.ndarray]:
            return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

        threshold, steps_per_round, promotions = (int(v) for v in arrays["meta"])
        dual = cls(
            PersistentBank.from_arrays(part("burn_in/")),
            PersistentBank.from_arrays(part("update/")),
            threshold,
            steps_per_round,
            arrays["counts"],
        )
        dual.promotions = promotions
        return dual
