"""Finite-difference oracles and invariant suites, shared by tests and the CLI.

The gradient checker perturbs parameters in place and re-evaluates a loss
closure, so it is independent of the analytic backward paths it validates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


def numeric_gradient(
    loss_fn: Callable[[], float],
    arrays: Sequence[np.ndarray],
    step: float = DEFAULT_STEP,
    skip_masks: Sequence[np.ndarray | None] | None = None,
) -> list[np.ndarray]:
    """Central finite differences of loss_fn with respect to each array.

    Entries selected by skip_masks are left at zero: frozen positions are not
    trainable, so they are excluded from the comparison rather than perturbed.
    """
    if skip_masks is None:
        skip_masks = [None] * len(arrays)
    grads = []
    for arr, skip in zip(arrays, skip_masks):
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        skip_flat = skip.ravel() if skip is not None else None
        for i in range(flat.size):
            if skip_flat is not None and skip_flat[i]:
                continue
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def max_relative_error(
    analytic: Sequence[np.ndarray],
    numeric: Sequence[np.ndarray],
    skip_masks: Sequence[np.ndarray | None] | None = None,
    floor: float = 1e-4,
) -> float:
    """Worst-case |a - n| / max(|a|, |n|, floor) over all compared entries.

    The floor turns the ratio into an absolute comparison for near-zero
    gradients, where central differences bottom out on roundoff noise.
    """
    if skip_masks is None:
        skip_masks = [None] * len(analytic)
    worst = 0.0
    for a, n, skip in zip(analytic, numeric, skip_masks):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        err = np.abs(a - n) / denom
        if skip is not None:
            err = np.where(skip, 0.0, err)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail}"
