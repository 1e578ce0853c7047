"""Seeded network construction: frozen-weight masking and Kaiming-uniform init.

Masked construction freezes a small, per-row subset of each weight matrix at
values drawn from N(0, 1). Mask layout depends only on (layer, row) and frozen
values only on (layer, row, col), so every member of an ensemble, in every
repetition, carries bit-identical masks and frozen values. Free weights and
biases are keyed by (repetition, estimator, layer, position) and differ per
member.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .net import LayerParams, Mode, NetSpec, Network
from .rng import Purpose, RngStream, SeedKey, bulk_uniform, derive_seed_grid


def n_fix(layer: int, hidden_dim: int) -> int:
    """Frozen weights per output unit: 2 on layer 1, else 3 (4 at width 256)."""
    if layer < 1:
        raise ValueError("layer indices are 1-based")
    if layer == 1:
        return 2
    return 4 if hidden_dim == 256 else 3


def kaiming_uniform_bound(fan_in: int, a: float = math.sqrt(5.0)) -> float:
    """Half-width of the Kaiming uniform range: gain * sqrt(3 / fan_in)."""
    if fan_in < 1:
        raise ValueError("fan_in must be at least 1")
    gain = math.sqrt(2.0 / (1.0 + a * a))
    return gain * math.sqrt(3.0 / fan_in)


@dataclass(frozen=True)
class FixSchedule:
    """Per-layer frozen counts; defaults follow the width rule in n_fix."""

    first_layer: int = 2
    later_layers: int | None = None  # None -> 4 at width 256, else 3
    overrides: tuple[int, ...] | None = None  # explicit per-layer counts

    def count(self, layer: int, hidden_dim: int) -> int:
        if self.overrides is not None:
            return self.overrides[layer - 1]
        if layer == 1:
            return self.first_layer
        if self.later_layers is not None:
            return self.later_layers
        return n_fix(layer, hidden_dim)


def _free_weights(rep, est, layer, out_dim, in_dim, bound) -> np.ndarray:
    rows = np.arange(out_dim)[:, None]
    cols = np.arange(in_dim)[None, :]
    seeds = derive_seed_grid(Purpose.FREE_WEIGHT, rep, est, layer, rows, cols)
    return bulk_uniform(seeds, -bound, bound)


def _biases(rep, est, layer, out_dim, in_dim) -> np.ndarray:
    bound = 1.0 / math.sqrt(in_dim)
    rows = np.arange(out_dim)
    seeds = derive_seed_grid(Purpose.BIAS, rep, est, layer, rows, np.zeros(out_dim, dtype=np.int64))
    return bulk_uniform(seeds, -bound, bound)


def build_mlp(spec: NetSpec, rep: int, estimator: int) -> Network:
    """Vanilla network: all weights Kaiming-uniform (a = sqrt(5)), empty masks."""
    if spec.mode is not Mode.MLP:
        raise ValueError("build_mlp requires spec.mode == Mode.MLP")
    layers = []
    for layer, (out_dim, in_dim) in enumerate(spec.layer_dims(), start=1):
        bound = kaiming_uniform_bound(in_dim)
        weight = _free_weights(rep, estimator, layer, out_dim, in_dim, bound)
        bias = _biases(rep, estimator, layer, out_dim, in_dim)
        layers.append(LayerParams.dense(weight, bias))
    return Network(spec, layers)


def build_wmlp(
    spec: NetSpec,
    rep: int,
    estimator: int,
    schedule: FixSchedule | None = None,
) -> Network:
    """Masked network: per output row, freeze a seeded subset of input weights.

    The frozen subset for row i of layer l is chosen by a stream keyed on
    (l, i) alone; the frozen value at (l, i, j) by a stream keyed on that
    position alone. Both are therefore shared across (rep, estimator).
    """
    if spec.mode is not Mode.WMLP:
        raise ValueError("build_wmlp requires spec.mode == Mode.WMLP")
    schedule = schedule or FixSchedule()
    layers = []
    for layer, (out_dim, in_dim) in enumerate(spec.layer_dims(), start=1):
        count = schedule.count(layer, spec.hidden_dim)
        if count > in_dim:
            raise ValueError(
                f"layer {layer}: cannot freeze {count} of {in_dim} inputs per row"
            )
        bound = kaiming_uniform_bound(in_dim)
        weight = _free_weights(rep, estimator, layer, out_dim, in_dim, bound)
        bias = _biases(rep, estimator, layer, out_dim, in_dim)

        rows, cols, values = [], [], []
        for i in range(out_dim):
            mask_stream = RngStream.from_key(
                SeedKey(Purpose.MASK_POSITIONS, layer=layer, row=i)
            )
            for j in sorted(mask_stream.sample_without_replacement(in_dim, count)):
                value_stream = RngStream.from_key(
                    SeedKey(Purpose.FROZEN_VALUE, layer=layer, row=i, col=j)
                )
                rows.append(i)
                cols.append(j)
                values.append(value_stream.standard_normal())
        layers.append(LayerParams.with_frozen(weight, bias, rows, cols, values))
    return Network(spec, layers)


def build_network(
    spec: NetSpec, rep: int, estimator: int, schedule: FixSchedule | None = None
) -> Network:
    """Dispatch on spec.mode."""
    if spec.mode is Mode.WMLP:
        return build_wmlp(spec, rep, estimator, schedule)
    return build_mlp(spec, rep, estimator)


def build_gate(in_features: int, n_experts: int, rep: int, estimator: int = 0):
    """Linear gate parameters (weight (k, in), bias (k,)) with the same init scheme."""
    bound = kaiming_uniform_bound(in_features)
    rows = np.arange(n_experts)[:, None]
    cols = np.arange(in_features)[None, :]
    seeds = derive_seed_grid(Purpose.GATE_WEIGHT, rep, estimator, 1, rows, cols)
    weight = bulk_uniform(seeds, -bound, bound)
    brows = np.arange(n_experts)
    bseeds = derive_seed_grid(
        Purpose.GATE_BIAS, rep, estimator, 1, brows, np.zeros(n_experts, dtype=np.int64)
    )
    bias = bulk_uniform(bseeds, -1.0 / math.sqrt(in_features), 1.0 / math.sqrt(in_features))
    return weight, bias
