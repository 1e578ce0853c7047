"""Deep ensembles over independently trained networks.

Prediction aggregates member outputs: the elementwise mean for regression,
and for classification the mean of the member logit matrices followed by
argmax (never a vote over member argmaxes). The interpolated model averages
the member parameters uniformly and stands alone as a single network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Task
from .net import IncompatibleModelsError, Network, interpolate_networks


@dataclass
class DeepEnsemble:
    members: list[Network]
    task: Task

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        spec = self.members[0].spec
        for m in self.members[1:]:
            if m.spec != spec:
                raise IncompatibleModelsError("ensemble members must share a spec")

    @property
    def size(self) -> int:
        return len(self.members)


def ensemble_scores(ens: DeepEnsemble, x: np.ndarray) -> np.ndarray:
    """Mean of member outputs (regression values or logits)."""
    total = ens.members[0].predict(x)
    for m in ens.members[1:]:
        total = total + m.predict(x)
    return total / ens.size


def predict_ensemble(ens: DeepEnsemble, x: np.ndarray) -> np.ndarray:
    """Aggregated prediction: mean outputs, or argmax of mean logits.

    Argmax ties resolve to the lowest class index.
    """
    scores = ensemble_scores(ens, x)
    if ens.task is Task.REGRESSION:
        return scores
    return np.argmax(scores, axis=1)


def interpolated_model(ens: DeepEnsemble) -> Network:
    """Single network with uniformly averaged member parameters."""
    k = ens.size
    return interpolate_networks(ens.members, [1.0 / k] * k)


def subsets_for_sizes(
    pool: list[Network], sizes: list[int], task: Task
) -> dict[int, DeepEnsemble]:
    """Prefix ensembles: size s uses pool[0:s], so ensembles are nested."""
    out = {}
    for s in sizes:
        if s > len(pool):
            raise ValueError(f"requested ensemble of {s} from a pool of {len(pool)}")
        out[s] = DeepEnsemble(members=pool[:s], task=task)
    return out
