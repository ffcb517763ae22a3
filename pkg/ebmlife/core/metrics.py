"""
Oracles and diagnostics: grid Boltzmann quadrature, KL divergence,
Gaussian-Frechet distance, batch diversity, saturation and bank lifetimes.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import linalg
from scipy.spatial.distance import pdist
from scipy.special import logsumexp

from .config import Config
from .energies import EnergyModel, energy
from .errors import ShapeError

logger = logging.getLogger(__name__)


class GridSpec(BaseModel):
    """Regular grid over a box in one or two dimensions"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    lows: Tuple[float, ...]
    highs: Tuple[float, ...]
    bins: Tuple[int, ...]

    @model_validator(mode="after")
    def _check(self) -> "GridSpec":
        if not (len(self.lows) == len(self.highs) == len(self.bins)):
            raise ValueError("lows, highs and bins must have one entry per axis")
        if not 1 <= len(self.bins) <= Config.GRID_MAX_DIM:
            raise ValueError(f"grid oracles support at most {Config.GRID_MAX_DIM} dimensions, got {len(self.bins)}")
        if any(not 1 <= b <= Config.GRID_MAX_BINS for b in self.bins):
            raise ValueError(f"bins per axis must be in [1, {Config.GRID_MAX_BINS}]")
        if any(not lo < hi for lo, hi in zip(self.lows, self.highs)):
            raise ValueError("each axis needs low < high")
        return self

    @classmethod
    def box(cls, low: float, high: float, bins: int, dim: int = 1) -> "GridSpec":
        return cls(lows=(low,) * dim, highs=(high,) * dim, bins=(bins,) * dim)

    @property
    def dim(self) -> int:
        return len(self.bins)

    def edges(self) -> list:
        return [np.linspace(lo, hi, b + 1) for lo, hi, b in zip(self.lows, self.highs, self.bins)]

    def centers(self) -> np.ndarray:
        """Cell centres as an (M, d) array in C order of the pmf"""
        axes = [0.5 * (e[:-1] + e[1:]) for e in self.edges()]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class GridPmf:
    """Probability per grid cell (shape = grid.bins), sums to 1"""
    grid: GridSpec
    probs: np.ndarray
    overflow_fraction: float = 0.0


def grid_boltzmann(model: EnergyModel, grid: GridSpec, temperature: float = 1.0) -> GridPmf:
    """
    Cell masses proportional to exp(-T * U(centre)), normalized by log-sum-exp.

    Raises:
        ValueError: If temperature <= 0
        ShapeError: If the model dimension differs from the grid's
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if model.dim is not None and model.dim != grid.dim:
        raise ShapeError(f"{model.dim}-dimensional energy on a {grid.dim}-dimensional grid")
    logits = -temperature * energy(model, grid.centers())
    probs = np.exp(logits - logsumexp(logits))
    probs /= probs.sum()
    return GridPmf(grid, probs.reshape(grid.bins))


def empirical_pmf(samples: np.ndarray, grid: GridSpec) -> GridPmf:
    """
    Normalized histogram of samples on the grid.

    Samples outside the box are dropped and reported in overflow_fraction.
    When nothing lands inside, the pmf is all zeros with overflow_fraction 1.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1 and grid.dim == 1:
        samples = samples[:, None]
    if samples.ndim != 2 or samples.shape[1] != grid.dim:
        raise ShapeError(f"samples {samples.shape} do not match a {grid.dim}-dimensional grid")
    counts, _ = np.histogramdd(samples, bins=grid.edges())
    inside = counts.sum()
    if inside == 0:
        logger.warning(f"None of {samples.shape[0]} samples fall inside the grid")
        return GridPmf(grid, np.zeros(grid.bins), overflow_fraction=1.0)
    return GridPmf(grid, counts / inside, overflow_fraction=float(1.0 - inside / samples.shape[0]))


def kl_divergence(p: GridPmf, q: GridPmf) -> float:
    """
    KL(p || q) = sum p log(p / q) with q smoothed by an additive constant.
    An empty p (no samples inside its grid) is infinitely far from any q.

    Raises:
        ValueError: If the grids differ
    """
    if p.grid != q.grid:
        raise ValueError("KL divergence needs both pmfs on the same grid")
    if not p.probs.sum() > 0:
        logger.warning("KL divergence of an empty pmf is infinite")
        return float("inf")
    q_smooth = q.probs + Config.KL_SMOOTHING
    q_smooth = q_smooth / q_smooth.sum()
    mask = p.probs > 0
    value = float(np.sum(p.probs[mask] * (np.log(p.probs[mask]) - np.log(q_smooth[mask]))))
    return max(value, 0.0)


def _as_matrix(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    return samples[:, None] if samples.ndim == 1 else samples


def frechet_from_moments(mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray) -> float:
    """||mu_a - mu_b||^2 + tr(A + B - 2 (A B)^1/2) for fitted Gaussians"""
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    if mu_a.shape != mu_b.shape or cov_a.shape != cov_b.shape:
        raise ShapeError("Gaussian fits differ in dimension")
    covmean = linalg.sqrtm(cov_a @ cov_b)
    # round-off can leave a small imaginary part
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean))
    return max(value, 0.0)


def _fit_gaussian(samples: np.ndarray, label: str) -> Tuple[np.ndarray, np.ndarray]:
    n, d = samples.shape
    if n < d + 1:
        raise ValueError(f"{label} needs at least {d + 1} samples for a {d}-dimensional fit, got {n}")
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    if np.linalg.eigvalsh(cov).min() <= 0.0:
        logger.warning(f"Degenerate covariance for {label}; adding {Config.FRECHET_RIDGE} * I")
        cov = cov + Config.FRECHET_RIDGE * np.eye(d)
    return samples.mean(axis=0), cov


def gaussian_frechet(samples_a: np.ndarray, samples_b: np.ndarray) -> float:
    """
    Frechet distance between Gaussian fits of two sample sets.

    Raises:
        ValueError: If a set has fewer than d + 1 samples
    """
    a, b = _as_matrix(samples_a), _as_matrix(samples_b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError("sample sets differ in dimension")
    mu_a, cov_a = _fit_gaussian(a, "samples_a")
    mu_b, cov_b = _fit_gaussian(b, "samples_b")
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b)


def batch_diversity(batch: np.ndarray) -> float:
    """Mean pairwise Euclidean distance"""
    batch = _as_matrix(batch)
    if batch.shape[0] < 2:
        raise ValueError("diversity needs at least two samples")
    return float(np.mean(pdist(batch)))


def saturation_stat(samples: np.ndarray, bounds: Optional[Tuple[float, float]] = None) -> Tuple[float, float]:
    """
    Returns:
        (mean L2 norm, fraction of coordinates outside bounds; 0 without bounds)
    """
    samples = _as_matrix(samples)
    mean_norm = float(np.mean(np.linalg.norm(samples, axis=1)))
    if bounds is None:
        return mean_norm, 0.0
    low, high = bounds
    outside = (samples < low) | (samples > high)
    return mean_norm, float(outside.mean())


@dataclass(frozen=True, eq=False)
class LifetimeStats:
    """
    Lifetimes recorded at rejuvenation; `empty` when no event was recorded.

    For a bank, `mean` and `events` cover every rejuvenation while the
    histogram covers the bank's recent window.
    """
    mean: float
    counts: np.ndarray
    edges: np.ndarray
    events: int
    empty: bool = False


def lifetime_stats(bank_or_lifetimes: Union[Sequence[int], object], bins: int = 50) -> LifetimeStats:
    """Mean and histogram of the lifetimes at which bank states were rejuvenated"""
    values = getattr(bank_or_lifetimes, "rejuvenation_lifetimes", bank_or_lifetimes)
    values = np.asarray(list(values), dtype=np.int64)
    if values.size == 0:
        return LifetimeStats(mean=float("nan"), counts=np.zeros(0, dtype=np.int64), edges=np.zeros(0), events=0, empty=True)
    counts, edges = np.histogram(values, bins=min(bins, len(np.unique(values))))
    events = getattr(bank_or_lifetimes, "rejuvenation_events", None)
    if events is None:
        return LifetimeStats(mean=float(values.mean()), counts=counts, edges=edges, events=int(values.size))
    return LifetimeStats(
        mean=float(bank_or_lifetimes.mean_rejuvenation_lifetime), counts=counts, edges=edges, events=int(events)
    )
