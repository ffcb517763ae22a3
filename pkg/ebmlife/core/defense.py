"""
Langevin purification defense and its BPDA+EOT PGD evaluation.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import log_softmax, softmax

from .autodiff import DenseNet, backward, forward, init_dense_net
from .config import DEFENSE_DEFAULTS, Activation
from .datasets import ToyDataset
from .energies import EnergyModel, Temperature
from .errors import EbmError, ShapeError
from .rng import RngStream
from .sampler import LangevinConfig, langevin_run

logger = logging.getLogger(__name__)

Bounds = Optional[Tuple[float, float]]


class Classifier:
    """Deterministic dense classifier returning logits over C >= 2 classes"""

    def __init__(self, net: DenseNet):
        if net.out_dim < 2:
            raise ShapeError(f"a classifier needs at least two logits, got {net.out_dim}")
        self.net = net

    @property
    def dim(self) -> int:
        return self.net.in_dim

    @property
    def num_classes(self) -> int:
        return self.net.out_dim

    def logits(self, x: np.ndarray) -> np.ndarray:
        return forward(self.net, x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)


class AttackConfig(BaseModel):
    """l-infinity PGD attack settings"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilon: float = Field(default=DEFENSE_DEFAULTS["epsilon"], ge=0)
    alpha: float = Field(default=DEFENSE_DEFAULTS["alpha"], gt=0)
    steps: int = Field(default=DEFENSE_DEFAULTS["attack_steps"], ge=1)
    reps: int = Field(default=DEFENSE_DEFAULTS["attack_reps"], ge=1, description="H_adv")
    random_start: bool = DEFENSE_DEFAULTS["random_start"]

    @model_validator(mode="after")
    def _check_alpha(self) -> "AttackConfig":
        # epsilon = 0 is the no-attack control; alpha is then irrelevant
        if self.epsilon > 0 and self.alpha > self.epsilon:
            raise ValueError(f"alpha {self.alpha} exceeds epsilon {self.epsilon}")
        return self


class DefenseConfig(BaseModel):
    """Purification length, ensemble size and sampler settings"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: int = Field(default=DEFENSE_DEFAULTS["defense_steps"], ge=0, description="K_def")
    reps: int = Field(default=DEFENSE_DEFAULTS["defense_reps"], ge=1, description="H_def")
    step_size: float = Field(default=DEFENSE_DEFAULTS["step_size"], gt=0)
    temperature: Temperature = DEFENSE_DEFAULTS["temperature"]

    @property
    def sampler(self) -> LangevinConfig:
        return LangevinConfig(step_size=self.step_size, num_steps=self.steps, temperature=self.temperature)


class ExampleResult(BaseModel):
    """Outcome for one evaluated example"""
    example_id: int
    label: int
    natural_prediction: int
    robust: int = Field(ge=0, le=1)
    first_break_step: Optional[int] = None
    final_adversary: List[float] = Field(default_factory=list)
    error: Optional[str] = None


class DefenseRecord(BaseModel):
    """Per-example defense bits with the natural and robust accuracies they imply"""
    results: List[ExampleResult]
    natural_accuracy: float
    robust_accuracy: float

    @property
    def bits(self) -> np.ndarray:
        return np.array([r.robust for r in self.results], dtype=np.int64)

    def rows(self) -> List[dict]:
        """Metrics-file rows: example id, natural prediction, D_i and first confirmed break"""
        return [
            {
                "example_id": r.example_id,
                "label": r.label,
                "natural_prediction": r.natural_prediction,
                "robust": r.robust,
                "first_break_step": "" if r.first_break_step is None else r.first_break_step,
                "error": r.error or "",
            }
            for r in self.results
        ]


def purify(
    ebm: EnergyModel,
    x_batch: np.ndarray,
    K: int,
    rng: RngStream,
    step_size: float = DEFENSE_DEFAULTS["step_size"],
    temperature: float = DEFENSE_DEFAULTS["temperature"],
    slots: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    One realization of K Langevin steps from every input.

    Raises:
        ValueError: If K < 0
    """
    if K < 0:
        raise ValueError(f"purification steps must be >= 0, got {K}")
    x = np.array(x_batch, dtype=np.float64)
    if K == 0:
        return x
    single = x.ndim == 1
    cfg = LangevinConfig(step_size=step_size, num_steps=K, temperature=temperature)
    out = langevin_run(ebm, x[None, :] if single else x, cfg, rng, slots=slots).final_state
    return out[0] if single else out


def _replicates(ebm: EnergyModel, x: np.ndarray, reps: int, cfg: DefenseConfig, rng: RngStream) -> np.ndarray:
    """(reps, d) independent purifications of a single point"""
    tiled = np.repeat(np.asarray(x, dtype=np.float64)[None, :], reps, axis=0)
    return purify(ebm, tiled, cfg.steps, rng, cfg.step_size, cfg.temperature)


def ensemble_predict(
    classifier: Classifier,
    ebm: EnergyModel,
    x: np.ndarray,
    H: int,
    defense_cfg: DefenseConfig,
    rng: RngStream,
) -> np.ndarray:
    """
    Mean logits of the classifier over H purifications of x.

    Without purification (K_def = 0) this is f(x) itself.

    Args:
        x: Point (d,) or batch (B, d); batch row b uses replicate slots b*H .. b*H + H - 1

    Returns:
        (C,) or (B, C) averaged logits
    """
    if H < 1:
        raise ValueError(f"ensemble size must be >= 1, got {H}")
    x = np.asarray(x, dtype=np.float64)
    if defense_cfg.steps == 0:
        return classifier.logits(x)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    tiled = np.repeat(batch, H, axis=0)
    purified = purify(ebm, tiled, defense_cfg.steps, rng, defense_cfg.step_size, defense_cfg.temperature)
    logits = classifier.logits(purified).reshape(batch.shape[0], H, -1).mean(axis=1)
    return logits[0] if single else logits


def predict_class(logits: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest class index"""
    return np.argmax(logits, axis=-1)


def _replicate_gradient(classifier: Classifier, points: np.ndarray, y: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cross-entropy gradient of the averaged logits, backpropagated at every point.

    Returns:
        ((1/H) sum_h J_h^T (softmax(mean logits) - e_y), mean logits)
    """
    mean_logits = classifier.logits(points).mean(axis=0)
    residual = softmax(mean_logits)
    residual[y] -= 1.0
    seed = np.repeat(residual[None, :], points.shape[0], axis=0)
    grads = backward(classifier.net, points, seed).input_grad
    return grads.mean(axis=0), mean_logits


def cross_entropy(logits: np.ndarray, y: int) -> float:
    return float(-log_softmax(logits)[y])


def bpda_eot_gradient(
    classifier: Classifier,
    ebm: EnergyModel,
    x: np.ndarray,
    y: int,
    H_adv: int,
    defense_cfg: DefenseConfig,
    rng: RngStream,
) -> np.ndarray:
    """
    Attack gradient through H_adv purifications, with purification treated as
    the identity in the backward pass.
    """
    return _attack_signal(classifier, ebm, x, y, H_adv, defense_cfg, rng)[0]


def _attack_signal(classifier, ebm, x, y, H_adv, defense_cfg, rng) -> Tuple[np.ndarray, np.ndarray]:
    if H_adv < 1:
        raise ValueError(f"attack replicates must be >= 1, got {H_adv}")
    points = _replicates(ebm, x, H_adv, defense_cfg, rng)
    return _replicate_gradient(classifier, points, y)


def pgd_step(
    x_adv: np.ndarray,
    grad: np.ndarray,
    x_orig: np.ndarray,
    eps: float,
    alpha: float,
    bounds: Bounds = None,
) -> np.ndarray:
    """
    Signed-gradient ascent step projected onto the l-infinity ball around x_orig,
    then onto the data box when one is given.

    Raises:
        ValueError: If x_adv starts outside the ball
    """
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_orig = np.asarray(x_orig, dtype=np.float64)
    if np.max(np.abs(x_adv - x_orig), initial=0.0) > eps + 1e-12:
        raise ValueError(f"adversary is outside the {eps} ball around the original point")
    stepped = x_adv + alpha * np.sign(grad)
    projected = np.clip(stepped, x_orig - eps, x_orig + eps)
    if bounds is not None:
        projected = np.clip(projected, bounds[0], bounds[1])
    return projected


def _random_start(x: np.ndarray, eps: float, gen: np.random.Generator, bounds: Bounds) -> np.ndarray:
    start = x + gen.uniform(-eps, eps, size=x.shape)
    return np.clip(start, bounds[0], bounds[1]) if bounds is not None else start


def example_stream(rng: RngStream, index: int) -> RngStream:
    """Sub-stream owned by evaluation example `index`"""
    return rng.child("example", index)


def pgd_attack(
    classifier: Classifier,
    x: np.ndarray,
    y: int,
    attack_cfg: AttackConfig,
    rng: RngStream,
    bounds: Bounds = None,
) -> Tuple[np.ndarray, Optional[int]]:
    """
    Plain PGD against the undefended classifier.

    Returns:
        (final adversary, first attack step at which f misclassified; 0 for a
        natural mistake, None if never)
    """
    x = np.asarray(x, dtype=np.float64)
    broken = 0 if int(classifier.predict(x)) != y else None
    x_adv = _random_start(x, attack_cfg.epsilon, rng.child("start").generator(), bounds) \
        if attack_cfg.random_start else x.copy()
    for j in range(1, attack_cfg.steps + 1):
        grad, logits = _replicate_gradient(classifier, x_adv[None, :], y)
        if broken is None and int(predict_class(logits)) != y:
            broken = j
        x_adv = pgd_step(x_adv, grad, x, attack_cfg.epsilon, attack_cfg.alpha, bounds)
    return x_adv, broken


def _evaluate_example(
    i: int,
    x: np.ndarray,
    y: int,
    classifier: Classifier,
    ebm: EnergyModel,
    attack_cfg: AttackConfig,
    defense_cfg: DefenseConfig,
    stream: RngStream,
    bounds: Bounds,
) -> ExampleResult:
    natural = int(predict_class(ensemble_predict(classifier, ebm, x, defense_cfg.reps, defense_cfg, stream.child("natural"))))
    robust, first_break = 1, None
    if natural != y:
        robust, first_break = 0, 0

    x_adv = _random_start(x, attack_cfg.epsilon, stream.child("start").generator(), bounds) \
        if attack_cfg.random_start else x.copy()
    for j in range(1, attack_cfg.steps + 1):
        grad, logits = _attack_signal(classifier, ebm, x_adv, y, attack_cfg.reps, defense_cfg, stream.child("attack", j))
        if robust and int(predict_class(logits)) != y:
            confirm = ensemble_predict(classifier, ebm, x_adv, defense_cfg.reps, defense_cfg, stream.child("defense", j))
            if int(predict_class(confirm)) != y:
                robust, first_break = 0, j
        x_adv = pgd_step(x_adv, grad, x, attack_cfg.epsilon, attack_cfg.alpha, bounds)

    return ExampleResult(
        example_id=i,
        label=y,
        natural_prediction=natural,
        robust=robust,
        first_break_step=first_break,
        final_adversary=x_adv.tolist(),
    )


def evaluate_defense(
    x: np.ndarray,
    y: np.ndarray,
    classifier: Classifier,
    ebm: EnergyModel,
    attack_cfg: AttackConfig,
    defense_cfg: DefenseConfig,
    rng: RngStream,
    bounds: Bounds = None,
) -> DefenseRecord:
    """
    BPDA+EOT PGD evaluation of the purification defense.

    Every example starts with D_i = 1, which drops to 0 for a natural mistake
    or once an attack round's H_adv prediction is wrong and the H_def
    prediction confirms it. Defense is checked at every attack round before
    that round's step; the final iterate gets no extra check.

    Args:
        x: Examples (n, d)
        y: Integer labels (n,)
        rng: Root stream; example i uses rng.child("example", i)
        bounds: Data box for image-like datasets

    Returns:
        DefenseRecord; examples that fail numerically are recorded with
        their error and D_i = 0
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"examples {x.shape} do not pair with labels {y.shape}")

    results = []
    for i in range(x.shape[0]):
        try:
            result = _evaluate_example(
                i, x[i], int(y[i]), classifier, ebm, attack_cfg, defense_cfg, example_stream(rng, i), bounds
            )
        except EbmError as exc:
            logger.warning(f"Defense evaluation failed on example {i}: {exc}")
            result = ExampleResult(example_id=i, label=int(y[i]), natural_prediction=-1, robust=0, error=str(exc))
        results.append(result)

    natural = float(np.mean([r.natural_prediction == r.label for r in results])) if results else 0.0
    robust = float(np.mean([r.robust for r in results])) if results else 0.0
    logger.info(
        f"Defense evaluation: {len(results)} examples, natural accuracy {natural:.3f}, robust accuracy {robust:.3f}"
    )
    return DefenseRecord(results=results, natural_accuracy=natural, robust_accuracy=robust)


def fit_classifier(
    dataset: ToyDataset,
    hidden: int,
    steps: int,
    lr: float,
    rng: RngStream,
    num_samples: int = 1024,
) -> Classifier:
    """
    Train a dense classifier on clean labeled samples by full-batch gradient
    descent on the mean cross-entropy. hidden = 0 gives a linear classifier.
    """
    x, y = dataset.sample_labeled(num_samples, rng.child("data").generator())
    sizes = [dataset.dim, dataset.num_classes] if hidden == 0 else [dataset.dim, hidden, dataset.num_classes]
    net = init_dense_net(sizes, rng.child("init").generator(), activation=Activation.TANH)
    onehot = np.eye(dataset.num_classes)[y]
    for _ in range(steps):
        seed = (softmax(forward(net, x), axis=1) - onehot) / len(x)
        grads = backward(net, x, seed).param_grads
        net = net.with_params([p - lr * g for p, g in zip(net.params, grads)])
    classifier = Classifier(net)
    accuracy = float(np.mean(classifier.predict(x) == y))
    logger.info(f"Fitted classifier on {dataset.name}: training accuracy {accuracy:.3f}")
    return classifier
