"""
Counter-based random streams.

Every random draw in ebmlife is addressed by a path of labels under a global
seed, e.g. (seed, "langevin", step, slot). A stream never carries hidden
position state, so resuming a run only needs the training step counter.
"""
import zlib
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

Label = Union[int, str]


def _label_to_int(label: Label) -> int:
    if isinstance(label, (bool, np.bool_)):
        raise TypeError("boolean stream labels are ambiguous")
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream labels must be non-negative, got {label}")
        return int(label)
    # crc32 is stable across processes, unlike hash()
    return zlib.crc32(label.encode("utf-8")) + (1 << 32)


@dataclass(frozen=True)
class RngStream:
    """
    An addressable random stream.

    Attributes:
        seed: Global experiment seed
        path: Integer key path below the seed
    """
    seed: int
    path: Tuple[int, ...] = ()

    def child(self, *labels: Label) -> "RngStream":
        """Return the sub-stream addressed by `labels` below this one"""
        return RngStream(self.seed, self.path + tuple(_label_to_int(lab) for lab in labels))

    def key(self) -> np.ndarray:
        """128-bit Philox key for this stream"""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return seq.generate_state(2, dtype=np.uint64)

    def generator(self, counter: int = 0) -> np.random.Generator:
        """
        Generator positioned at counter block `counter`.

        Blocks are 2**64 Philox increments apart, so draws from different
        blocks never overlap.
        """
        return np.random.Generator(np.random.Philox(key=self.key(), counter=int(counter) << 64))
