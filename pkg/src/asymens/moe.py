"""Mixtures of experts over a shared linear gate.

Two gate activations (plain softmax, or a reparameterized Gumbel-softmax
sample) and two combination rules:

* output averaging: experts run independently and their outputs are mixed by
  the gate weights, per input row;
* weight interpolation: the gate weights mix the expert *parameters* per input
  row and the expert architecture is evaluated once with the mixed
  parameters. By linearity of each layer map this is computed as a gate-
  weighted mix of the per-expert pre-activations, layer by layer, without
  materializing per-row weight matrices.

Both rules train end to end: gradients flow into every expert and through the
gate activation into the gate parameters. For Gumbel gates the soft sample's
reparameterized gradient is used. Inference with a Gumbel gate averages a
fixed number of sampled forward passes; the average is anchored on the first
sample so that identical samples (e.g. noise forced to zero) collapse to it
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import Task
from .net import (
    ForwardCache,
    Gradients,
    IncompatibleModelsError,
    Network,
    backward,
    forward,
    gelu,
    gelu_grad,
    softmax,
)


class GateKind(Enum):
    SOFTMAX = "softmax"
    GUMBEL_SOFTMAX = "gumbel-softmax"


class Combine(Enum):
    OUTPUT_AVERAGE = "output-average"
    WEIGHT_INTERPOLATION = "weight-interpolation"


@dataclass(frozen=True)
class GateSpec:
    kind: GateKind = GateKind.SOFTMAX
    temperature: float = 1.0
    inference_samples: int = 10
    average: str = "outputs"  # "outputs" or "gates" across inference samples

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.inference_samples < 1:
            raise ValueError("inference_samples must be at least 1")
        if self.average not in ("outputs", "gates"):
            raise ValueError("average must be 'outputs' or 'gates'")


@dataclass
class MixtureModel:
    experts: list[Network]
    gate_weight: np.ndarray  # (k, in_features)
    gate_bias: np.ndarray    # (k,)
    gate_spec: GateSpec
    combine: Combine

    def __post_init__(self):
        if not self.experts:
            raise ValueError("a mixture needs at least one expert")
        spec = self.experts[0].spec
        for e in self.experts[1:]:
            if e.spec != spec:
                raise IncompatibleModelsError("experts must share a spec")
        if self.combine is Combine.WEIGHT_INTERPOLATION:
            ref = self.experts[0].layers
            for e in self.experts[1:]:
                for a, b in zip(ref, e.layers):
                    if not np.array_equal(a.mask, b.mask) or not np.array_equal(
                        a.frozen_values, b.frozen_values
                    ):
                        raise IncompatibleModelsError(
                            "weight interpolation needs identical masks and frozen values"
                        )

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    # --- trainer protocol ---

    def param_arrays(self) -> list[np.ndarray]:
        out = [self.gate_weight, self.gate_bias]
        for e in self.experts:
            out.extend(e.param_arrays())
        return out

    def decay_flags(self) -> list[bool]:
        flags = [True, False]
        for e in self.experts:
            flags.extend(e.decay_flags())
        return flags

    def frozen_masks(self) -> list[np.ndarray | None]:
        masks: list[np.ndarray | None] = [None, None]
        for e in self.experts:
            masks.extend(e.frozen_masks())
        return masks

    def clamp_frozen(self) -> None:
        for e in self.experts:
            e.clamp_frozen()

    def state_copy(self) -> list[np.ndarray]:
        return [a.copy() for a in self.param_arrays()]

    def load_state(self, state: list[np.ndarray]) -> None:
        for dst, src in zip(self.param_arrays(), state):
            np.copyto(dst, src)

    def forward_train(self, x, rng=None):
        return moe_forward(self, x, mode="train", rng=rng)

    def backward_arrays(self, cache, out_grad) -> list[np.ndarray]:
        grads = moe_backward(self, cache, out_grad)
        out = [grads.gate_weight, grads.gate_bias]
        for e, g in zip(self.experts, grads.experts):
            out.extend(e.grad_arrays(g))
        return out

    def predict_scores(self, x, rng=None, noise=None) -> np.ndarray:
        return moe_predict_scores(self, x, rng=rng, noise=noise)


@dataclass
class MoEGradients:
    gate_weight: np.ndarray
    gate_bias: np.ndarray
    experts: list[Gradients]


@dataclass
class MoECache:
    x: np.ndarray
    alpha: np.ndarray
    inv_temperature: float  # 0.0 when alpha was injected directly (no gate grads)
    # output averaging
    expert_caches: list[ForwardCache] | None = None
    expert_outputs: list[np.ndarray] | None = None
    # weight interpolation
    layer_inputs: list[np.ndarray] | None = None        # input to each layer
    expert_pre: list[list[np.ndarray]] | None = None    # [layer][expert] pre-activations
    mixed_pre: list[np.ndarray] | None = None           # gate-mixed pre-activations


def sample_gumbel(rng, shape) -> np.ndarray:
    """Standard Gumbel noise, -log(-log(U)), from a deterministic stream."""
    n = int(np.prod(shape))
    u = np.maximum(rng.uniform_block(n), 1e-300).reshape(shape)
    return -np.log(-np.log(u))


def gate_forward(model: MixtureModel, x, mode="train", rng=None, noise=None):
    """Gate weights per row: softmax of logits, optionally Gumbel-perturbed.

    Returns (alpha, inv_temperature); inv_temperature feeds the backward
    chain (1 for a plain softmax, 1/tau for a Gumbel-softmax sample). The
    noise argument overrides sampling and exists for tests; noise=0 reduces
    the Gumbel path to softmax(logits / tau).
    """
    logits = x @ model.gate_weight.T + model.gate_bias
    spec = model.gate_spec
    if spec.kind is GateKind.SOFTMAX:
        return softmax(logits), 1.0
    if noise is None:
        if rng is None:
            raise ValueError("a Gumbel gate needs an rng stream (or explicit noise)")
        noise = sample_gumbel(rng, logits.shape)
    alpha = softmax((logits + noise) / spec.temperature)
    return alpha, 1.0 / spec.temperature


def _interpolated_forward(model: MixtureModel, x, alpha):
    """Layerwise gate-weighted mix of expert pre-activations.

    Equivalent to building sum_i alpha_i(row) * theta_i per row and running
    the architecture once: each layer map is affine in its parameters, so the
    mixed pre-activation equals the mix of per-expert pre-activations on the
    shared layer input.
    """
    layer_inputs = [x]
    expert_pre: list[list[np.ndarray]] = []
    mixed_pre: list[np.ndarray] = []
    a = x
    n_layers = len(model.experts[0].layers)
    for li in range(n_layers):
        zs = [a @ e.layers[li].weight.T + e.layers[li].bias for e in model.experts]
        z = alpha[:, 0:1] * zs[0]
        for i in range(1, model.n_experts):
            z = z + alpha[:, i : i + 1] * zs[i]
        expert_pre.append(zs)
        mixed_pre.append(z)
        if li < n_layers - 1:
            a = gelu(z)
            layer_inputs.append(a)
    return mixed_pre[-1], layer_inputs, expert_pre, mixed_pre


def moe_forward(
    model: MixtureModel,
    x,
    mode: str = "train",
    rng=None,
    noise=None,
    alpha=None,
) -> tuple[np.ndarray, MoECache]:
    """One mixture forward pass; alpha injects gate weights directly (tests)."""
    x = np.asarray(x, dtype=np.float64)
    if alpha is not None:
        alpha = np.asarray(alpha, dtype=np.float64)
        inv_temp = 0.0
    else:
        alpha, inv_temp = gate_forward(model, x, mode=mode, rng=rng, noise=noise)

    if model.combine is Combine.OUTPUT_AVERAGE:
        outputs, caches = [], []
        for e in model.experts:
            out, cache = forward(e.layers, x)
            outputs.append(out)
            caches.append(cache)
        mixed = alpha[:, 0:1] * outputs[0]
        for i in range(1, model.n_experts):
            mixed = mixed + alpha[:, i : i + 1] * outputs[i]
        return mixed, MoECache(
            x=x, alpha=alpha, inv_temperature=inv_temp,
            expert_caches=caches, expert_outputs=outputs,
        )

    out, layer_inputs, expert_pre, mixed_pre = _interpolated_forward(model, x, alpha)
    return out, MoECache(
        x=x, alpha=alpha, inv_temperature=inv_temp,
        layer_inputs=layer_inputs, expert_pre=expert_pre, mixed_pre=mixed_pre,
    )


def _gate_backward(model: MixtureModel, cache: MoECache, dalpha: np.ndarray):
    """Chain dalpha through the (Gumbel-)softmax into the gate parameters."""
    if cache.inv_temperature == 0.0:  # alpha was injected, gate not involved
        return np.zeros_like(model.gate_weight), np.zeros_like(model.gate_bias)
    alpha = cache.alpha
    inner = np.sum(dalpha * alpha, axis=1, keepdims=True)
    dlogits = alpha * (dalpha - inner) * cache.inv_temperature
    return dlogits.T @ cache.x, dlogits.sum(axis=0)


def moe_backward(model: MixtureModel, cache: MoECache, out_grad: np.ndarray) -> MoEGradients:
    """Gradients for the gate and all experts from one cached forward pass."""
    out_grad = np.asarray(out_grad, dtype=np.float64)
    alpha = cache.alpha
    k = model.n_experts

    if model.combine is Combine.OUTPUT_AVERAGE:
        dalpha = np.empty_like(alpha)
        expert_grads = []
        for i, e in enumerate(model.experts):
            dalpha[:, i] = np.sum(out_grad * cache.expert_outputs[i], axis=1)
            expert_grads.append(
                backward(e.layers, cache.expert_caches[i], alpha[:, i : i + 1] * out_grad)
            )
        gw, gb = _gate_backward(model, cache, dalpha)
        return MoEGradients(gate_weight=gw, gate_bias=gb, experts=expert_grads)

    # weight interpolation: walk the mixed architecture backwards
    n_layers = len(model.experts[0].layers)
    dalpha = np.zeros_like(alpha)
    grads = [
        Gradients(
            weights=[np.zeros_like(lp.weight) for lp in e.layers],
            biases=[np.zeros_like(lp.bias) for lp in e.layers],
        )
        for e in model.experts
    ]
    delta = out_grad
    for li in range(n_layers - 1, -1, -1):
        a_in = cache.layer_inputs[li]
        for i, e in enumerate(model.experts):
            weighted = alpha[:, i : i + 1] * delta
            grads[i].weights[li] = weighted.T @ a_in
            grads[i].biases[li] = weighted.sum(axis=0)
            dalpha[:, i] += np.sum(delta * cache.expert_pre[li][i], axis=1)
        if li > 0:
            da = alpha[:, 0:1] * (delta @ model.experts[0].layers[li].weight)
            for i in range(1, k):
                da = da + alpha[:, i : i + 1] * (delta @ model.experts[i].layers[li].weight)
            delta = da * gelu_grad(cache.mixed_pre[li - 1])
    for e, g in zip(model.experts, grads):
        for lp, gw_l in zip(e.layers, g.weights):
            if lp.frozen_rows.size:
                gw_l[lp.frozen_rows, lp.frozen_cols] = 0.0
    gw, gb = _gate_backward(model, cache, dalpha)
    return MoEGradients(gate_weight=gw, gate_bias=gb, experts=grads)


def moe_predict_scores(model: MixtureModel, x, rng=None, noise=None) -> np.ndarray:
    """Raw inference outputs.

    Softmax gates are deterministic: one forward pass. Gumbel gates draw
    inference_samples independent gate samples and average, either the
    forward outputs (default) or the gate vectors followed by one combine.
    The average is anchored on the first sample, so identical samples return
    that sample exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    spec = model.gate_spec
    if spec.kind is GateKind.SOFTMAX:
        return moe_forward(model, x, mode="eval")[0]

    n = spec.inference_samples
    if spec.average == "gates":
        first_alpha, _ = gate_forward(model, x, mode="eval", rng=rng, noise=noise)
        acc = np.zeros_like(first_alpha)
        for _ in range(1, n):
            alpha_s, _ = gate_forward(model, x, mode="eval", rng=rng, noise=noise)
            acc += alpha_s - first_alpha
        return moe_forward(model, x, alpha=first_alpha + acc / n)[0]

    first = moe_forward(model, x, mode="eval", rng=rng, noise=noise)[0]
    acc = np.zeros_like(first)
    for _ in range(1, n):
        acc += moe_forward(model, x, mode="eval", rng=rng, noise=noise)[0] - first
    return first + acc / n


def moe_predict(model: MixtureModel, x, task: Task, rng=None, noise=None) -> np.ndarray:
    """Task-level prediction: argmax over classes, identity for regression."""
    scores = moe_predict_scores(model, x, rng=rng, noise=noise)
    if task is Task.REGRESSION:
        return scores
    return np.argmax(scores, axis=1)


def build_mixture(
    expert_spec,
    n_experts: int,
    rep: int,
    gate_spec: GateSpec,
    combine: Combine,
    schedule=None,
) -> MixtureModel:
    """Experts indexed 0..k-1 as the estimator coordinate, plus a seeded gate."""
    from .initializers import build_gate, build_network

    experts = [build_network(expert_spec, rep, i, schedule) for i in range(n_experts)]
    gate_w, gate_b = build_gate(expert_spec.in_features, n_experts, rep)
    return MixtureModel(
        experts=experts,
        gate_weight=gate_w,
        gate_bias=gate_b,
        gate_spec=gate_spec,
        combine=combine,
    )
