"""
Binary checkpoints of training state.

Layout (all integers little-endian):

    magic "EBLC" | version u32 | meta length u64 | meta JSON (UTF-8)
    | array count u32 | arrays... | sha256 of everything before (32 bytes)

Each array is: name length u32 | name | dtype u8 (0 = f64, 1 = i64)
| ndim u32 | shape u64 * ndim | little-endian data.
"""
import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .banks import DualBank, PairedBank, PersistentBank
from .config import Config
from .errors import CheckpointError
from .optim import OptimizerState
from .router import EnergyRouter
from .trainer import TrainConfig, TrainState

logger = logging.getLogger(__name__)

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_DIGEST_SIZE = 32


@dataclass(eq=False)
class Checkpoint:
    """A loaded checkpoint: training state plus what is needed to resume it"""
    state: TrainState
    config: Optional[TrainConfig]
    seed: Optional[int]
    config_hash: Optional[str]
    extra: Dict[str, Any]


def config_hash(config: Mapping) -> str:
    """sha256 of the canonical JSON form of a resolved configuration"""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _opt_arrays(opt: OptimizerState, prefix: str) -> Dict[str, np.ndarray]:
    arrays = {f"{prefix}m{i}": m for i, m in enumerate(opt.first)}
    arrays.update({f"{prefix}v{i}": v for i, v in enumerate(opt.second)})
    return arrays


def _opt_meta(opt: OptimizerState) -> Dict[str, Any]:
    return {"step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "size": len(opt.first)}


def _opt_from(meta: Mapping, arrays: Mapping[str, np.ndarray], prefix: str) -> OptimizerState:
    size = int(meta["size"])
    return OptimizerState(
        first=[arrays[f"{prefix}m{i}"] for i in range(size)],
        second=[arrays[f"{prefix}v{i}"] for i in range(size)],
        step=int(meta["step"]),
        beta1=float(meta["beta1"]),
        beta2=float(meta["beta2"]),
        eps=float(meta["eps"]),
    )


def _prefixed(arrays: Mapping[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {name[len(prefix):]: value for name, value in arrays.items() if name.startswith(prefix)}


def _state_record(state: TrainState) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    meta: Dict[str, Any] = {"step": state.step, "metrics": state.metrics}
    arrays: Dict[str, np.ndarray] = {}

    ebm_meta, ebm_arrays = state.ebm.to_record()
    meta["ebm"] = ebm_meta
    arrays.update({f"ebm/{k}": v for k, v in ebm_arrays.items()})
    meta["ebm_opt"] = _opt_meta(state.ebm_opt)
    arrays.update(_opt_arrays(state.ebm_opt, "ebm_opt/"))

    meta["bank"] = None
    if state.bank is not None:
        meta["bank"] = "paired" if isinstance(state.bank, PairedBank) else "persistent"
        arrays.update({f"bank/{k}": v for k, v in state.bank.to_arrays().items()})
    meta["dual"] = state.dual is not None
    if state.dual is not None:
        arrays.update({f"dual/{k}": v for k, v in state.dual.to_arrays().items()})

    for name in ("generator", "source_generator"):
        generator = getattr(state, name)
        meta[name] = None
        if generator is not None:
            gen_meta, gen_arrays = generator.to_record()
            meta[name] = gen_meta
            arrays.update({f"{name}/{k}": v for k, v in gen_arrays.items()})
    meta["generator_opt"] = None
    if state.generator_opt is not None:
        meta["generator_opt"] = _opt_meta(state.generator_opt)
        arrays.update(_opt_arrays(state.generator_opt, "generator_opt/"))

    if state.data is not None:
        arrays["data"] = state.data
    return meta, arrays


def _state_from(meta: Mapping, arrays: Mapping[str, np.ndarray]) -> TrainState:
    state = TrainState(
        step=int(meta["step"]),
        ebm=EnergyRouter.energy_from_record(meta["ebm"], _prefixed(arrays, "ebm/")),
        ebm_opt=_opt_from(meta["ebm_opt"], arrays, "ebm_opt/"),
        data=arrays.get("data"),
        metrics=list(meta["metrics"]),
    )
    if meta["bank"] == "paired":
        state.bank = PairedBank.from_arrays(_prefixed(arrays, "bank/"))
    elif meta["bank"] == "persistent":
        state.bank = PersistentBank.from_arrays(_prefixed(arrays, "bank/"))
    if meta["dual"]:
        state.dual = DualBank.from_arrays(_prefixed(arrays, "dual/"))
    for name in ("generator", "source_generator"):
        if meta[name] is not None:
            setattr(state, name, EnergyRouter.generator_from_record(meta[name], _prefixed(arrays, f"{name}/")))
    if meta["generator_opt"] is not None:
        state.generator_opt = _opt_from(meta["generator_opt"], arrays, "generator_opt/")
    return state


def _pack_array(name: str, value: np.ndarray) -> bytes:
    value = np.asarray(value)
    if value.dtype.kind in "iub":
        code, value = 1, value.astype("<i8")
    elif value.dtype.kind == "f":
        code, value = 0, value.astype("<f8")
    else:
        raise CheckpointError(f"array {name} has unsupported dtype {value.dtype}")
    encoded = name.encode("utf-8")
    header = struct.pack("<I", len(encoded)) + encoded + struct.pack("<BI", code, value.ndim)
    header += struct.pack(f"<{value.ndim}Q", *value.shape)
    return header + np.ascontiguousarray(value).tobytes()


def save_checkpoint(
    state: TrainState,
    path: Union[str, Path],
    config: Optional[TrainConfig] = None,
    seed: Optional[int] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write `state` (and the config and seed needed to resume it) to `path`.

    Returns:
        The written path
    """
    meta, arrays = _state_record(state)
    if config is not None:
        resolved = config.model_dump(mode="json")
        meta["config"] = resolved
        meta["config_hash"] = config_hash(resolved)
    meta["seed"] = seed
    meta["extra"] = extra or {}

    meta_bytes = json.dumps(meta).encode("utf-8")
    parts: List[bytes] = [
        Config.CHECKPOINT_MAGIC,
        struct.pack("<IQ", Config.CHECKPOINT_VERSION, len(meta_bytes)),
        meta_bytes,
        struct.pack("<I", len(arrays)),
    ]
    parts.extend(_pack_array(name, value) for name, value in arrays.items())
    body = b"".join(parts)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + hashlib.sha256(body).digest())
    logger.info(f"Saved checkpoint at step {state.step} to {path}")
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint ends inside a record")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: On a missing file, bad magic, checksum mismatch
            (including truncation) or unsupported version
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    magic = Config.CHECKPOINT_MAGIC
    if raw[:len(magic)] != magic:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    body, digest = raw[:-_DIGEST_SIZE], raw[-_DIGEST_SIZE:]
    if len(raw) < len(magic) + _DIGEST_SIZE or hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"checksum mismatch in {path}; the file is corrupt or truncated")

    reader = _Reader(body)
    reader.take(len(magic))
    version, meta_len = reader.unpack("<IQ")
    if version != Config.CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {Config.CHECKPOINT_VERSION})")
    meta = json.loads(reader.take(meta_len).decode("utf-8"))

    arrays: Dict[str, np.ndarray] = {}
    (count,) = reader.unpack("<I")
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        code, ndim = reader.unpack("<BI")
        if code not in _DTYPES:
            raise CheckpointError(f"array {name} has unknown dtype code {code}")
        shape = reader.unpack(f"<{ndim}Q")
        dtype = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arrays[name] = np.frombuffer(reader.take(size), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

    config = TrainConfig(**meta["config"]) if meta.get("config") else None
    return Checkpoint(
        state=_state_from(meta, arrays),
        config=config,
        seed=meta.get("seed"),
        config_hash=meta.get("config_hash"),
        extra=meta.get("extra", {}),
    )
