"""
Reverse-mode gradients for small dense feed-forward networks.
Produces parameter gradients (learning) and input gradients (Langevin drift, attacks).
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import Activation, Config
from .errors import NumericOverflowError, ShapeError


def _frozen_copy(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DenseLayer:
    """
    One affine map followed by an elementwise activation.

    With `recenter` set, pre-activations are centred on their batch mean
    before the activation (a batch-norm-like shift without learned scale).
    """
    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY
    slope: float = 0.2
    recenter: bool = False

    def __post_init__(self):
        weight = _frozen_copy(self.weight)
        bias = _frozen_copy(self.bias)
        if weight.ndim != 2:
            raise ShapeError(f"weight must be a matrix, got shape {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match weight rows {weight.shape[0]}")
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise NumericOverflowError("layer parameters must be finite")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def activate(self, a: np.ndarray) -> np.ndarray:
        if self.activation is Activation.TANH:
            return np.tanh(a)
        if self.activation is Activation.LEAKY_RELU:
            return np.where(a >= 0.0, a, self.slope * a)
        return a

    def activation_grad(self, a: np.ndarray) -> np.ndarray:
        if self.activation is Activation.TANH:
            t = np.tanh(a)
            return 1.0 - t * t
        if self.activation is Activation.LEAKY_RELU:
            # subgradient at 0 taken from the positive side
            return np.where(a >= 0.0, 1.0, self.slope)
        return np.ones_like(a)


@dataclass(frozen=True, eq=False)
class DenseNet:
    """Immutable stack of dense layers"""
    layers: Tuple[DenseLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("a network needs at least one layer")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"layer output {prev.out_dim} does not feed layer input {nxt.in_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def params(self) -> List[np.ndarray]:
        """Parameters in canonical order [W0, b0, W1, b1, ...]"""
        out = []
        for layer in self.layers:
            out.extend([layer.weight, layer.bias])
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "DenseNet":
        """Same architecture, new parameter values"""
        if len(params) != 2 * len(self.layers):
            raise ShapeError(f"expected {2 * len(self.layers)} parameter arrays, got {len(params)}")
        layers = []
        for i, layer in enumerate(self.layers):
            weight, bias = np.asarray(params[2 * i]), np.asarray(params[2 * i + 1])
            if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
                raise ShapeError(f"parameter shapes changed in layer {i}")
            layers.append(DenseLayer(weight, bias, layer.activation, layer.slope, layer.recenter))
        return DenseNet(tuple(layers))

    def describe(self) -> List[Dict]:
        """Architecture without parameter values (checkpoint metadata)"""
        return [
            {
                "in": layer.in_dim,
                "out": layer.out_dim,
                "activation": layer.activation.value,
                "slope": layer.slope,
                "recenter": layer.recenter,
            }
            for layer in self.layers
        ]

    @classmethod
    def from_description(cls, description: List[Dict], params: Sequence[np.ndarray]) -> "DenseNet":
        layers = []
        for i, entry in enumerate(description):
            layers.append(DenseLayer(
                params[2 * i],
                params[2 * i + 1],
                Activation(entry["activation"]),
                float(entry["slope"]),
                bool(entry["recenter"]),
            ))
        return cls(tuple(layers))


@dataclass(frozen=True, eq=False)
class GradientBundle:
    """Gradients of seed . forward(x) w.r.t. parameters (summed over the batch) and input"""
    param_grads: List[np.ndarray] = field(default_factory=list)
    input_grad: Optional[np.ndarray] = None


def init_dense_net(
    sizes: Sequence[int],
    gen: np.random.Generator,
    activation: Activation = Activation.LEAKY_RELU,
    slope: float = 0.2,
    recenter: bool = False,
    gain: float = 1.0,
) -> DenseNet:
    """
    Build a network with fan-in scaled Gaussian weights and zero biases.

    Hidden layers use `activation` (and `recenter` if set); the last layer is affine.

    Args:
        sizes: Layer widths including input and output, e.g. [2, 32, 32, 1]
        gen: Random generator for the weights
        activation: Hidden activation
        slope: Negative-side slope for leaky relu
        recenter: Batch recentering on hidden pre-activations
        gain: Multiplier on the weight scale
    """
    if len(sizes) < 2:
        raise ShapeError("sizes must list at least input and output widths")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        weight = gen.normal(0.0, gain / np.sqrt(fan_in), size=(fan_out, fan_in))
        layers.append(DenseLayer(
            weight,
            np.zeros(fan_out),
            Activation.IDENTITY if last else activation,
            slope,
            False if last else recenter,
        ))
    return DenseNet(tuple(layers))


def _as_batch(net: DenseNet, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match network input {net.in_dim}")
    return batch, single


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        bad_rows = np.where(~np.all(np.isfinite(values.reshape(values.shape[0], -1)), axis=1))[0]
        raise NumericOverflowError(f"non-finite {what}", chain=int(bad_rows[0]))


def _trace(net: DenseNet, batch: np.ndarray):
    """Forward pass keeping layer inputs and (recentred) pre-activations"""
    inputs, pre = [], []
    h = batch
    for i, layer in enumerate(net.layers):
        inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        if layer.recenter:
            a = a - a.mean(axis=0, keepdims=True)
        _check_finite(a, f"pre-activation in layer {i}")
        pre.append(a)
        h = layer.activate(a)
    return inputs, pre, h


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """
    Evaluate the network.

    Args:
        net: Network
        x: Input of shape (d,) or a batch (B, d)

    Returns:
        Output of shape (out,) or (B, out)

    Raises:
        ShapeError: If x does not match the first layer
    """
    batch, single = _as_batch(net, x)
    _, _, out = _trace(net, batch)
    return out[0] if single else out


def backward(net: DenseNet, x: np.ndarray, out_seed: np.ndarray) -> GradientBundle:
    """
    Exact reverse-mode gradients of sum(out_seed * forward(net, x)).

    Parameter gradients are summed over the batch; the input gradient keeps
    the shape of x.

    Raises:
        ShapeError: If x or out_seed have the wrong shape
        NumericOverflowError: If an intermediate value is not finite
    """
    batch, single = _as_batch(net, x)
    grads, g = _reverse(net, batch, _as_seed(net, batch, single, out_seed), with_params=True)
    return GradientBundle(param_grads=grads, input_grad=g[0] if single else g)


def input_gradient(net: DenseNet, x: np.ndarray, out_seed: np.ndarray) -> np.ndarray:
    """
    Input gradient of sum(out_seed * forward(net, x)) without the parameter
    gradients; equal to backward(net, x, out_seed).input_grad.
    """
    batch, single = _as_batch(net, x)
    _, g = _reverse(net, batch, _as_seed(net, batch, single, out_seed), with_params=False)
    return g[0] if single else g


def _as_seed(net: DenseNet, batch: np.ndarray, single: bool, out_seed: np.ndarray) -> np.ndarray:
    seed = np.asarray(out_seed, dtype=np.float64)
    seed = seed[None, :] if single and seed.ndim == 1 else seed
    if seed.shape != (batch.shape[0], net.out_dim):
        raise ShapeError(f"seed shape {np.shape(out_seed)} does not match output {net.out_dim}")
    return seed


def _reverse(net: DenseNet, batch: np.ndarray, seed: np.ndarray, with_params: bool) -> Tuple[List[np.ndarray], np.ndarray]:
    inputs, pre, _ = _trace(net, batch)
    grads: List[np.ndarray] = [None] * (2 * len(net.layers)) if with_params else []
    g = seed
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        g_a = g * layer.activation_grad(pre[i])
        if layer.recenter:
            g_a = g_a - g_a.mean(axis=0, keepdims=True)
        if with_params:
            grads[2 * i] = g_a.T @ inputs[i]
            grads[2 * i + 1] = g_a.sum(axis=0)
        g = g_a @ layer.weight
        _check_finite(g, f"gradient below layer {i}")
    return grads, g


def finite_diff_check(
    net: DenseNet,
    x: np.ndarray,
    h: float,
    out_seed: Optional[np.ndarray] = None,
    atol: float = 0.0,
) -> float:
    """
    Compare backward() against central differences.

    Args:
        net: Network
        x: Input (single or batch)
        h: Difference step, > 0
        out_seed: Output weighting; ones when omitted
        atol: Absolute disagreement forgiven per entry, for entries whose
            analytic value is zero and whose difference quotient is rounding noise

    Returns:
        max (|analytic - numeric| - atol)+ / (|analytic| + 1e-8) over every
        parameter entry and input coordinate
    """
    if not h > 0:
        raise ValueError(f"finite difference step must be positive, got {h}")
    if atol < 0:
        raise ValueError(f"atol must be >= 0, got {atol}")

    def disagreement(analytic: float, numeric: float) -> float:
        return max(abs(analytic - numeric) - atol, 0.0) / (abs(analytic) + Config.FD_DENOM_EPS)

    x = np.asarray(x, dtype=np.float64)
    out_shape = (net.out_dim,) if x.ndim == 1 else (x.shape[0], net.out_dim)
    seed = np.ones(out_shape) if out_seed is None else np.asarray(out_seed, dtype=np.float64)

    def objective(candidate: DenseNet, point: np.ndarray) -> float:
        return float(np.sum(seed * forward(candidate, point)))

    bundle = backward(net, x, seed)
    worst = 0.0

    params = [p.copy() for p in net.params]
    for k, analytic in enumerate(bundle.param_grads):
        for idx in np.ndindex(params[k].shape):
            original = params[k][idx]
            params[k][idx] = original + h
            f_plus = objective(net.with_params(params), x)
            params[k][idx] = original - h
            f_minus = objective(net.with_params(params), x)
            params[k][idx] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, disagreement(analytic[idx], numeric))

    point = x.copy()
    for idx in np.ndindex(point.shape):
        original = point[idx]
        point[idx] = original + h
        f_plus = objective(net, point)
        point[idx] = original - h
        f_minus = objective(net, point)
        point[idx] = original
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = bundle.input_grad[idx]
        worst = max(worst, disagreement(analytic, numeric))

    return float(worst)


def tree_norm(arrays: Sequence[np.ndarray]) -> float:
    """Global L2 norm of a parameter-shaped list"""
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in arrays)))


def tree_axpy(alpha: float, xs: Sequence[np.ndarray], ys: Sequence[np.ndarray]) -> List[np.ndarray]:
    """alpha * xs + ys, elementwise over two parameter-shaped lists"""
    if len(xs) != len(ys):
        raise ShapeError("parameter trees differ in length")
    return [alpha * x + y for x, y in zip(xs, ys)]
