"""
Adam, the stepwise learning-rate schedule and global-norm gradient clipping.
"""
import bisect
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .autodiff import tree_norm
from .config import Config
from .errors import NumericOverflowError, ShapeError


@dataclass(eq=False)
class OptimizerState:
    """Adam moments and step counter for one parameter list"""
    first: List[np.ndarray]
    second: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(opt: OptimizerState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> List[np.ndarray]:
    """
    Bias-corrected Adam update.

    Advances `opt` in place and returns the new parameter list.

    Raises:
        ShapeError: If params, grads and moments do not line up
        NumericOverflowError: If a gradient is not finite
    """
    if not (len(params) == len(grads) == len(opt.first)):
        raise ShapeError(f"{len(params)} parameters, {len(grads)} gradients, {len(opt.first)} moments")
    for p, g, m in zip(params, grads, opt.first):
        if np.shape(p) != np.shape(g) or np.shape(p) != m.shape:
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter shape {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise NumericOverflowError("non-finite gradient reached the optimizer")

    t = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    new_params, first, second = [], [], []
    for p, g, m, v in zip(params, grads, opt.first, opt.second):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + opt.eps))
        first.append(m)
        second.append(v)
    opt.first, opt.second, opt.step = first, second, t
    return new_params


class AnnealSchedule(BaseModel):
    """Piecewise-constant learning rate: (rate, first step) pairs"""
    model_config = ConfigDict(frozen=True)

    points: Tuple[Tuple[float, int], ...]

    @field_validator("points")
    @classmethod
    def _check_points(cls, points):
        if not points:
            raise ValueError("schedule needs at least one (rate, step) pair")
        steps = [s for _, s in points]
        if any(rate <= 0 for rate, _ in points):
            raise ValueError("learning rates must be positive")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("schedule steps must be strictly increasing")
        if steps[0] < 0:
            raise ValueError("schedule steps must be non-negative")
        return points

    @classmethod
    def constant(cls, rate: float) -> "AnnealSchedule":
        return cls(points=((rate, 0),))

    @classmethod
    def default(cls) -> "AnnealSchedule":
        return cls(points=Config.ANNEAL_SCHEDULE)


def lr_at(schedule: AnnealSchedule, step: int) -> float:
    """Rate of the last pair whose first step is <= step"""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    starts = [s for _, s in schedule.points]
    idx = max(bisect.bisect_right(starts, step) - 1, 0)
    return schedule.points[idx][0]


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> List[np.ndarray]:
    """
    Global-norm clipping; max_norm = 0 disables it.

    Raises:
        ValueError: If max_norm < 0
    """
    if max_norm < 0:
        raise ValueError(f"max_norm must be >= 0, got {max_norm}")
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if max_norm == 0:
        return grads
    norm = tree_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads]
    return grads
