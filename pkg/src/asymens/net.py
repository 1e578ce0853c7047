"""Dense MLP math: GeLU forward pass, losses, exact reverse-mode gradients.

All numerics are float64 numpy arrays. A network is a stack of linear layers
(in -> hidden -> ... -> hidden -> out) with GeLU on every hidden layer and a
linear output layer. Layers may carry a frozen-position mask: gradients at
masked entries are zeroed and the stored frozen values are restored after
every parameter mutation, so masked weights stay bit-identical to their
initialization for the lifetime of the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import erf


class Mode(Enum):
    MLP = "mlp"
    WMLP = "wmlp"


class DimensionError(ValueError):
    """Operand shapes do not match the declared architecture."""


class IncompatibleModelsError(ValueError):
    """Parameter sets differ in shape, mask layout, or frozen values."""


@dataclass(frozen=True)
class NetSpec:
    """Architecture description. Layer shapes: in->h, then h->h, then h->out."""

    in_features: int
    hidden_dim: int
    out_features: int
    mode: Mode = Mode.MLP
    num_layers: int = 4

    def layer_dims(self) -> list[tuple[int, int]]:
        """(out, in) pairs for every layer, first to last."""
        dims = []
        fan_in = self.in_features
        for _ in range(self.num_layers - 1):
            dims.append((self.hidden_dim, fan_in))
            fan_in = self.hidden_dim
        dims.append((self.out_features, fan_in))
        return dims


@dataclass
class LayerParams:
    """One layer: weight (out, in), bias (out,), and the frozen-position record.

    mask[r, c] is True where the weight is frozen; (frozen_rows, frozen_cols,
    frozen_values) lists the same positions with the values they must hold.
    The values are recorded explicitly so restoration is bit-exact and
    testable without re-deriving seeds.
    """

    weight: np.ndarray
    bias: np.ndarray
    mask: np.ndarray
    frozen_rows: np.ndarray
    frozen_cols: np.ndarray
    frozen_values: np.ndarray

    @classmethod
    def dense(cls, weight, bias) -> "LayerParams":
        """A layer with no frozen positions."""
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        empty = np.zeros(0, dtype=np.int64)
        return cls(
            weight=weight,
            bias=bias,
            mask=np.zeros(weight.shape, dtype=bool),
            frozen_rows=empty,
            frozen_cols=empty.copy(),
            frozen_values=np.zeros(0, dtype=np.float64),
        )

    @classmethod
    def with_frozen(cls, weight, bias, rows, cols, values) -> "LayerParams":
        weight = np.asarray(weight, dtype=np.float64)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        mask = np.zeros(weight.shape, dtype=bool)
        mask[rows, cols] = True
        weight[rows, cols] = values
        return cls(
            weight=weight,
            bias=np.asarray(bias, dtype=np.float64),
            mask=mask,
            frozen_rows=rows,
            frozen_cols=cols,
            frozen_values=values,
        )

    def clamp_frozen(self) -> None:
        """Restore frozen positions to their recorded values."""
        if self.frozen_rows.size:
            self.weight[self.frozen_rows, self.frozen_cols] = self.frozen_values

    def copy(self) -> "LayerParams":
        return LayerParams(
            weight=self.weight.copy(),
            bias=self.bias.copy(),
            mask=self.mask,  # immutable by convention, shared
            frozen_rows=self.frozen_rows,
            frozen_cols=self.frozen_cols,
            frozen_values=self.frozen_values,
        )


@dataclass
class Gradients:
    """Per-layer weight and bias gradients, shapes matching the parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class ForwardCache:
    """Activation record from one forward pass, consumed by backward."""

    inputs: list[np.ndarray]  # inputs[i] feeds layer i; inputs[0] is the batch
    pre: list[np.ndarray]     # pre-activations per layer


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(x):
    return 0.5 * (1.0 + erf(x * _SQRT1_2))


def gelu(x):
    """Exact GeLU: x * Phi(x) with Phi the standard normal CDF."""
    return x * normal_cdf(x)


def gelu_grad(x):
    """d/dx [x * Phi(x)] = Phi(x) + x * phi(x)."""
    return normal_cdf(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def forward(layers: list[LayerParams], x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the batch through the stack; GeLU on all but the last layer.

    Returns (output, cache); the cache holds everything backward needs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layers[0].weight.shape[1]:
        raise DimensionError(
            f"input of shape {x.shape} does not feed a layer expecting "
            f"{layers[0].weight.shape[1]} features"
        )
    inputs = [x]
    pre = []
    a = x
    last = len(layers) - 1
    for i, lp in enumerate(layers):
        if a.shape[1] != lp.weight.shape[1]:
            raise DimensionError(f"layer {i}: got {a.shape[1]} features, expected {lp.weight.shape[1]}")
        z = a @ lp.weight.T + lp.bias
        pre.append(z)
        if i < last:
            a = gelu(z)
            inputs.append(a)
    return pre[-1], ForwardCache(inputs=inputs, pre=pre)


def backward(layers: list[LayerParams], cache: ForwardCache, out_grad: np.ndarray) -> Gradients:
    """Exact reverse-mode gradients; entries at frozen positions are zeroed."""
    n = len(layers)
    if len(cache.pre) != n or out_grad.shape != cache.pre[-1].shape:
        raise DimensionError("cache does not match this layer stack")
    gw: list[np.ndarray] = [np.empty(0)] * n
    gb: list[np.ndarray] = [np.empty(0)] * n
    delta = np.asarray(out_grad, dtype=np.float64)
    for i in range(n - 1, -1, -1):
        gw[i] = delta.T @ cache.inputs[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i].weight) * gelu_grad(cache.pre[i - 1])
    for i, lp in enumerate(layers):
        if lp.frozen_rows.size:
            gw[i][lp.frozen_rows, lp.frozen_cols] = 0.0
    return Gradients(weights=gw, biases=gb)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient wrt pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.square(diff)))
    return loss, (2.0 / diff.size) * diff


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with log-sum-exp shift; finite for |logit| up to 1e4."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the labeled class, and its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise DimensionError(f"labels shape {labels.shape} for batch {batch}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(batch), labels]))
    grad = softmax(logits)
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch


@dataclass
class Network:
    """A spec plus its parameters, with the training hooks the optimizer uses."""

    spec: NetSpec
    layers: list[LayerParams]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        return forward(self.layers, x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return forward(self.layers, x)[0]

    def backward(self, cache: ForwardCache, out_grad: np.ndarray) -> Gradients:
        return backward(self.layers, cache, out_grad)

    def copy(self) -> "Network":
        return Network(self.spec, [lp.copy() for lp in self.layers])

    # --- trainer protocol (shared with the mixture models) ---

    def forward_train(self, x: np.ndarray, rng=None) -> tuple[np.ndarray, ForwardCache]:
        return forward(self.layers, x)

    def backward_arrays(self, cache: ForwardCache, out_grad: np.ndarray) -> list[np.ndarray]:
        return self.grad_arrays(backward(self.layers, cache, out_grad))

    def predict_scores(self, x: np.ndarray, rng=None) -> np.ndarray:
        """Raw outputs (regression values or logits) for evaluation."""
        return forward(self.layers, x)[0]

    def frozen_masks(self) -> list[np.ndarray | None]:
        out: list[np.ndarray | None] = []
        for lp in self.layers:
            out.append(lp.mask if lp.frozen_rows.size else None)
            out.append(None)
        return out

    # --- flat parameter views used by the optimizer ---

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for lp in self.layers:
            out.append(lp.weight)
            out.append(lp.bias)
        return out

    def decay_flags(self) -> list[bool]:
        """Weight decay applies to weight matrices only, never biases."""
        return [True, False] * len(self.layers)

    def grad_arrays(self, grads: Gradients) -> list[np.ndarray]:
        out = []
        for gw, gb in zip(grads.weights, grads.biases):
            out.append(gw)
            out.append(gb)
        return out

    def clamp_frozen(self) -> None:
        for lp in self.layers:
            lp.clamp_frozen()

    def state_copy(self) -> list[np.ndarray]:
        return [a.copy() for a in self.param_arrays()]

    def load_state(self, state: list[np.ndarray]) -> None:
        for dst, src in zip(self.param_arrays(), state):
            np.copyto(dst, src)


def _check_compatible(sets: list[list[LayerParams]]) -> None:
    ref = sets[0]
    for s in sets[1:]:
        if len(s) != len(ref):
            raise IncompatibleModelsError("different layer counts")
        for a, b in zip(ref, s):
            if a.weight.shape != b.weight.shape or a.bias.shape != b.bias.shape:
                raise IncompatibleModelsError("layer shape mismatch")
            if not np.array_equal(a.mask, b.mask):
                raise IncompatibleModelsError("frozen masks differ")
            if not np.array_equal(a.frozen_values, b.frozen_values):
                raise IncompatibleModelsError("frozen values differ")


def interpolate_params(
    sets: list[list[LayerParams]], weights: list[float]
) -> list[LayerParams]:
    """Elementwise weighted sum of parameter sets sharing masks.

    Frozen positions are restored to the (shared) recorded values afterwards,
    which coincides with the weighted sum whenever the weights sum to one and
    keeps the frozen-position invariant exact.
    """
    if len(sets) != len(weights):
        raise IncompatibleModelsError(f"{len(sets)} sets but {len(weights)} weights")
    if not all(math.isfinite(w) for w in weights):
        raise ValueError("interpolation weights must be finite")
    _check_compatible(sets)
    out = []
    for li, ref in enumerate(sets[0]):
        w_acc = weights[0] * sets[0][li].weight
        b_acc = weights[0] * sets[0][li].bias
        for alpha, s in zip(weights[1:], sets[1:]):
            w_acc += alpha * s[li].weight
            b_acc += alpha * s[li].bias
        merged = LayerParams(
            weight=w_acc,
            bias=b_acc,
            mask=ref.mask,
            frozen_rows=ref.frozen_rows,
            frozen_cols=ref.frozen_cols,
            frozen_values=ref.frozen_values,
        )
        merged.clamp_frozen()
        out.append(merged)
    return out


def interpolate_networks(nets: list[Network], weights: list[float]) -> Network:
    """A standalone network whose parameters are the weighted sum of the inputs."""
    for n in nets[1:]:
        if n.spec != nets[0].spec:
            raise IncompatibleModelsError("network specs differ")
    return Network(nets[0].spec, interpolate_params([n.layers for n in nets], weights))
