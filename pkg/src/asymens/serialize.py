"""Bit-exact model serialization: an npz container with a JSON manifest.

Arrays round-trip at full precision; masks are rebuilt from the stored frozen
positions. Mixture files extend the network layout with gate parameters and
the gate configuration.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .moe import Combine, GateKind, GateSpec, MixtureModel
from .net import LayerParams, Mode, NetSpec, Network


def _spec_manifest(spec: NetSpec) -> dict:
    return {
        "in_features": spec.in_features,
        "hidden_dim": spec.hidden_dim,
        "out_features": spec.out_features,
        "mode": spec.mode.value,
        "num_layers": spec.num_layers,
    }


def _spec_from_manifest(m: dict) -> NetSpec:
    return NetSpec(
        in_features=m["in_features"],
        hidden_dim=m["hidden_dim"],
        out_features=m["out_features"],
        mode=Mode(m["mode"]),
        num_layers=m["num_layers"],
    )


def _layer_arrays(prefix: str, layers: list[LayerParams]) -> dict:
    arrays = {}
    for i, lp in enumerate(layers):
        arrays[f"{prefix}w{i}"] = lp.weight
        arrays[f"{prefix}b{i}"] = lp.bias
        arrays[f"{prefix}fr{i}"] = lp.frozen_rows
        arrays[f"{prefix}fc{i}"] = lp.frozen_cols
        arrays[f"{prefix}fv{i}"] = lp.frozen_values
    return arrays


def _layers_from_arrays(prefix: str, n_layers: int, data) -> list[LayerParams]:
    layers = []
    for i in range(n_layers):
        rows = data[f"{prefix}fr{i}"]
        if rows.size:
            layers.append(
                LayerParams.with_frozen(
                    data[f"{prefix}w{i}"],
                    data[f"{prefix}b{i}"],
                    rows,
                    data[f"{prefix}fc{i}"],
                    data[f"{prefix}fv{i}"],
                )
            )
        else:
            layers.append(LayerParams.dense(data[f"{prefix}w{i}"], data[f"{prefix}b{i}"]))
    return layers


def save_model(model: Network | MixtureModel, path: str | Path) -> None:
    path = Path(path)
    if isinstance(model, Network):
        manifest = {"kind": "network", "spec": _spec_manifest(model.spec)}
        arrays = _layer_arrays("", model.layers)
    else:
        manifest = {
            "kind": "mixture",
            "spec": _spec_manifest(model.experts[0].spec),
            "n_experts": model.n_experts,
            "combine": model.combine.value,
            "gate": {
                "kind": model.gate_spec.kind.value,
                "temperature": model.gate_spec.temperature,
                "inference_samples": model.gate_spec.inference_samples,
                "average": model.gate_spec.average,
            },
        }
        arrays = {"gate_weight": model.gate_weight, "gate_bias": model.gate_bias}
        for e, expert in enumerate(model.experts):
            arrays.update(_layer_arrays(f"e{e}_", expert.layers))
    arrays["manifest"] = np.frombuffer(
        json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path: str | Path) -> Network | MixtureModel:
    with np.load(Path(path)) as data:
        manifest = json.loads(bytes(data["manifest"].tobytes()).decode())
        spec = _spec_from_manifest(manifest["spec"])
        if manifest["kind"] == "network":
            return Network(spec, _layers_from_arrays("", spec.num_layers, data))
        gate = manifest["gate"]
        experts = [
            Network(spec, _layers_from_arrays(f"e{e}_", spec.num_layers, data))
            for e in range(manifest["n_experts"])
        ]
        return MixtureModel(
            experts=experts,
            gate_weight=data["gate_weight"],
            gate_bias=data["gate_bias"],
            gate_spec=GateSpec(
                kind=GateKind(gate["kind"]),
                temperature=gate["temperature"],
                inference_samples=gate["inference_samples"],
                average=gate["average"],
            ),
            combine=Combine(manifest["combine"]),
        )
