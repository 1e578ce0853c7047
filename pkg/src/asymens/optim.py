"""AdamW with decoupled weight decay, mini-batch training, and early stopping.

The trainer works against a small model protocol (param_arrays, decay_flags,
frozen_masks, forward_train, backward_arrays, predict_scores, clamp_frozen,
state_copy, load_state) implemented by both plain networks and the mixture
models, so one loop serves every family.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import SplitData, Task
from .net import cross_entropy_loss, mse_loss
from .rng import Purpose, RngStream, SeedKey


class NumericError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 3e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 1000
    patience: int = 16
    rep: int = 0
    estimator: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class AdamWState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamWState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamWState,
    cfg: TrainConfig,
    decay_flags: list[bool] | None = None,
    frozen_masks: list[np.ndarray | None] | None = None,
) -> None:
    """One decoupled-weight-decay update, in place.

    theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * lambda * theta,
    with the decay read from the pre-update value. Biases (decay flag False)
    receive no decay; frozen positions receive neither update nor decay, and
    their moments stay zero even if a gradient erroneously reaches them.
    """
    if decay_flags is None:
        decay_flags = [True] * len(params)
    if frozen_masks is None:
        frozen_masks = [None] * len(params)
    state.step += 1
    bc1 = 1.0 - cfg.beta1 ** state.step
    bc2 = 1.0 - cfg.beta2 ** state.step
    lr = cfg.learning_rate
    for p, g, m, v, decays, mask in zip(
        params, grads, state.m, state.v, decay_flags, frozen_masks
    ):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in optimizer step")
        if mask is not None:
            g = np.where(mask, 0.0, g)
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * np.square(g)
        delta = lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
        if decays and cfg.weight_decay:
            delta = delta + lr * cfg.weight_decay * p
        if mask is not None:
            delta[mask] = 0.0
        p -= delta


@dataclass
class EarlyStopper:
    """Stop after `patience` consecutive epochs without strict improvement."""

    patience: int
    best: float = math.inf
    best_epoch: int = 0
    bad_epochs: int = 0
    best_state: list[np.ndarray] | None = None

    def update(self, epoch: int, val_loss: float, state_fn: Callable[[], list]) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            self.best_state = state_fn()
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainReport:
    epochs_run: int
    best_val_loss: float
    best_epoch: int
    wall_time_s: float
    metric_name: str
    test_metric: float


def loss_for_task(task: Task):
    return mse_loss if task is Task.REGRESSION else cross_entropy_loss


def evaluate_scores(scores: np.ndarray, targets: np.ndarray, task: Task) -> tuple[str, float]:
    """Test metric from raw scores: rmse for regression, accuracy otherwise."""
    if task is Task.REGRESSION:
        return "rmse", float(np.sqrt(np.mean(np.square(scores.ravel() - targets.ravel()))))
    predicted = np.argmax(scores, axis=1)
    return "accuracy", float(np.mean(predicted == targets))


def _as_targets(y: np.ndarray, out_features: int, task: Task) -> np.ndarray:
    if task is Task.REGRESSION:
        return y.reshape(-1, out_features)
    return y


def train(
    model,
    data: SplitData,
    cfg: TrainConfig,
    val_loss_hook: Callable[[int], float] | None = None,
) -> tuple[object, TrainReport]:
    """Train in place and return (model, report).

    Per epoch: seeded shuffle of the training rows, mini-batches of
    cfg.batch_size (final short batch kept), forward/backward/AdamW, then the
    full-split validation loss. Stops once the loss has not strictly improved
    for cfg.patience consecutive epochs or at cfg.max_epochs, and restores the
    best-epoch parameters. val_loss_hook substitutes the computed validation
    loss; it exists for tests that script the stopping sequence.
    """
    started = time.perf_counter()
    loss_fn = loss_for_task(data.task)
    params = model.param_arrays()
    state = AdamWState.for_params(params)
    decay_flags = model.decay_flags()
    masks = model.frozen_masks()
    stopper = EarlyStopper(cfg.patience)
    out_features = data.class_count if data.task is Task.CLASSIFICATION else 1
    y_train = _as_targets(data.y_train, out_features, data.task)
    y_val = _as_targets(data.y_val, out_features, data.task)
    n = data.x_train.shape[0]
    if n == 0 or data.x_val.shape[0] == 0:
        raise ValueError("train and validation splits must be non-empty")

    noise = RngStream.from_key(
        SeedKey(Purpose.GUMBEL, repetition=cfg.rep, estimator=cfg.estimator, layer=1)
    )
    epochs_run = 0
    for epoch in range(1, cfg.max_epochs + 1):
        epochs_run = epoch
        order = RngStream.from_key(
            SeedKey(
                Purpose.SHUFFLE,
                repetition=cfg.rep,
                estimator=cfg.estimator,
                layer=1,
                row=epoch,
            )
        ).permutation(n)
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            out, cache = model.forward_train(data.x_train[idx], noise)
            loss, gout = loss_fn(out, y_train[idx])
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_no}"
                )
            grads = model.backward_arrays(cache, gout)
            adamw_step(params, grads, state, cfg, decay_flags, masks)
            model.clamp_frozen()

        if val_loss_hook is not None:
            val_loss = float(val_loss_hook(epoch))
        else:
            eval_rng = RngStream.from_key(
                SeedKey(
                    Purpose.GUMBEL,
                    repetition=cfg.rep,
                    estimator=cfg.estimator,
                    layer=2,
                    row=epoch,
                )
            )
            val_scores = model.predict_scores(data.x_val, eval_rng)
            val_loss = loss_fn(val_scores, y_val)[0]
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        if stopper.update(epoch, val_loss, model.state_copy):
            break

    if stopper.best_state is not None:
        model.load_state(stopper.best_state)
        model.clamp_frozen()

    test_rng = RngStream.from_key(
        SeedKey(Purpose.GUMBEL, repetition=cfg.rep, estimator=cfg.estimator, layer=3)
    )
    scores = model.predict_scores(data.x_test, test_rng)
    metric_name, metric = evaluate_scores(scores, data.y_test, data.task)
    report = TrainReport(
        epochs_run=epochs_run,
        best_val_loss=stopper.best,
        best_epoch=stopper.best_epoch,
        wall_time_s=time.perf_counter() - started,
        metric_name=metric_name,
        test_metric=metric,
    )
    return model, report
