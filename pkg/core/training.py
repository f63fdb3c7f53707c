"""Mini-batch training with Adam, MSE loss, clipping and early stopping."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
import pandas as pd

from core.errors import DivergenceDetected, EmptyInput, EmptySplit, LengthMismatch, NonFiniteActivation, ShapeMismatch
from core.models import AdamState, ModelParams, ModelSpec, TrainConfig, TrainHistory, WindowedDataset
from core.neural import (
    backward,
    init_params,
    load_tensors,
    predict_batched,
    save_checkpoint,
    save_tensors,
    sequence_forward,
)

logger = logging.getLogger(__name__)


def mse(preds, targets) -> float:
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if preds.shape != targets.shape:
        raise LengthMismatch(f"{preds.shape} predictions vs {targets.shape} targets", module="training")
    if preds.size == 0:
        raise EmptyInput("mse of an empty sequence", module="training")
    return float(np.mean((preds - targets) ** 2))


# Adam ----------------------------------------------------------------------

def init_adam(params: ModelParams) -> AdamState:
    tensors = params.named_tensors()
    return AdamState({k: np.zeros_like(v) for k, v in tensors.items()}, {k: np.zeros_like(v) for k, v in tensors.items()}, 0)


def adam_step(params: ModelParams, grads: ModelParams, state: Optional[AdamState], config: TrainConfig) -> Tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    state = state or init_adam(params)
    theta = params.named_tensors()
    g_all = grads.named_tensors()
    if {k: v.shape for k, v in theta.items()} != {k: v.shape for k, v in g_all.items()}:
        raise ShapeMismatch("gradient tensors do not mirror the parameters", module="training")
    if {k: v.shape for k, v in state.m.items()} != {k: v.shape for k, v in theta.items()}:
        raise ShapeMismatch("optimizer state does not mirror the parameters", module="training")

    t = state.t + 1
    correction1 = 1.0 - config.beta1 ** t
    correction2 = 1.0 - config.beta2 ** t
    new_theta, new_m, new_v = {}, {}, {}
    for name, value in theta.items():
        g = g_all[name]
        m = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        v = config.beta2 * state.v[name] + (1.0 - config.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_theta[name] = value - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        new_m[name], new_v[name] = m, v
    return ModelParams.from_named(new_theta), AdamState(new_m, new_v, t)


def clip_gradients(grads: ModelParams, max_norm: Optional[float]) -> Tuple[ModelParams, float]:
    tensors = grads.named_tensors()
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in tensors.values())))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / (norm + 1e-12)
    return ModelParams.from_named({k: g * scale for k, g in tensors.items()}), norm


# Early stopping -----------------------------------------------------------

class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True when training should stop."""

    def __init__(self, patience: int, min_delta: float = 0.0) -> None:
        self.patience = patience
        self.min_delta = min_delta
        self.best_loss = float("inf")
        self.best_epoch = 0
        self.epoch = 0
        self.stale = 0

    def update(self, val_loss: float) -> bool:
        self.epoch += 1
        if val_loss < self.best_loss - self.min_delta:
            self.best_loss = val_loss
            self.best_epoch = self.epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


# Training loop -------------------------------------------------------------

def _batches(n: int, batch_size: int, rng: Optional[np.random.Generator]):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(
    spec: ModelSpec,
    dataset: WindowedDataset,
    config: TrainConfig,
    params: Optional[ModelParams] = None,
    on_epoch: Optional[Callable[[int, float, float], None]] = None,
    checkpoint_path: Optional[str | Path] = None,
) -> Tuple[ModelParams, TrainHistory]:
    """Fit ``spec`` on the train segment; returns the best-validation parameters.

    With ``checkpoint_path`` set, every improving epoch writes the parameters
    there and the optimizer state beside it (suffix ``.adam``).
    """
    X_train, y_train = dataset.segment("train")
    X_val, y_val = dataset.segment("val")
    if len(y_train) == 0 or len(y_val) == 0:
        raise EmptySplit("training needs non-empty train and validation segments", module="training")

    params = params if params is not None else init_params(spec, config.seed)
    state = init_adam(params)
    rng = np.random.default_rng(config.seed) if config.shuffle else None
    stopper = EarlyStopping(config.patience, config.min_delta)
    history = TrainHistory()
    best_params = params.copy()

    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for idx in _batches(len(y_train), config.batch_size, rng):
            windows, targets = X_train[idx], y_train[idx]
            try:
                _, cache = sequence_forward(windows, spec, params)
                grads, loss = backward(windows, targets, spec, params, cache)
            except NonFiniteActivation as exc:
                raise DivergenceDetected(f"epoch {epoch}: {exc}", best_params, history) from exc
            if not np.isfinite(loss):
                raise DivergenceDetected(f"epoch {epoch}: train loss became {loss}", best_params, history)
            grads, _ = clip_gradients(grads, config.clip_norm)
            params, state = adam_step(params, grads, state, config)
            total += loss * len(idx)
        train_loss = total / len(y_train)

        try:
            val_loss = mse(predict_batched(X_val, spec, params), y_val)
        except NonFiniteActivation as exc:
            raise DivergenceDetected(f"epoch {epoch}: {exc}", best_params, history) from exc
        if not np.isfinite(val_loss):
            raise DivergenceDetected(f"epoch {epoch}: validation loss became {val_loss}", best_params, history)

        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        stop = stopper.update(val_loss)
        if stopper.improved:
            best_params = params.copy()
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, spec, best_params, {"epoch": epoch, "val_loss": val_loss})
                save_adam_state(Path(checkpoint_path).with_suffix(".adam"), state)
        history.best_epoch = stopper.best_epoch
        logger.info("epoch %d/%d train=%.6g val=%.6g%s", epoch, config.epochs, train_loss, val_loss,
                    " *" if stopper.improved else "")
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        if stop:
            history.stopped_early = epoch < config.epochs
            if history.stopped_early:
                logger.info("early stop at epoch %d; best epoch %d", epoch, stopper.best_epoch)
            break

    return best_params, history


# Artifacts -----------------------------------------------------------------

def history_frame(history: TrainHistory) -> pd.DataFrame:
    return pd.DataFrame({
        "epoch": np.arange(1, history.epochs_run + 1),
        "train_loss": history.train_loss,
        "val_loss": history.val_loss,
    })


def write_history_csv(history: TrainHistory, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    history_frame(history).to_csv(path, index=False, float_format="%.17g")
    return path


def save_adam_state(path: str | Path, state: AdamState) -> Path:
    tensors = {f"m.{k}": v for k, v in state.m.items()}
    tensors.update({f"v.{k}": v for k, v in state.v.items()})
    return save_tensors(path, {"kind": "adam", "t": state.t}, tensors)


def load_adam_state(path: str | Path) -> AdamState:
    header, tensors = load_tensors(path)
    m = {k[2:]: v for k, v in tensors.items() if k.startswith("m.")}
    v = {k[2:]: t for k, t in tensors.items() if k.startswith("v.")}
    return AdamState(m, v, int(header["t"]))
