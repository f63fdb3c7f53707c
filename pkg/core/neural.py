"""LSTM / bidirectional LSTM with a dense regression head, forward and BPTT.

Every function accepts a single window ``(W, F)`` or a batch ``(B, W, F)``.
Batches are evaluated in one vectorized pass; gradients are the gradient of
the mean squared error over the batch, which for one window is
``(pred - target) ** 2``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.errors import NonFiniteActivation, ShapeMismatch, StaleCache
from core.models import GATES, LSTM_TENSOR_NAMES, LstmParams, LstmState, ModelParams, ModelSpec

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"LSTMCKPT"
CHECKPOINT_VERSION = 1


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class CellCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


@dataclass
class ForwardCache:
    fingerprint: str
    windows: np.ndarray
    forward_steps: List[CellCache]
    backward_steps: Optional[List[CellCache]]
    pooled: np.ndarray
    preds: np.ndarray


# Parameters ----------------------------------------------------------------

def _init_lstm(rng: np.random.Generator, hidden: int, features: int) -> LstmParams:
    bound = 1.0 / np.sqrt(hidden)
    tensors: Dict[str, np.ndarray] = {}
    for gate in GATES:
        tensors[f"w_{gate}"] = rng.uniform(-bound, bound, (hidden, features))
    for gate in GATES:
        tensors[f"u_{gate}"] = rng.uniform(-bound, bound, (hidden, hidden))
    for gate in GATES:
        tensors[f"b_{gate}"] = np.zeros(hidden)
    tensors["b_f"][:] = 1.0
    return LstmParams(**tensors)


def init_params(spec: ModelSpec, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases, forget bias 1."""
    rng = np.random.default_rng(seed)
    forward = _init_lstm(rng, spec.hidden_size, spec.n_features)
    backward = _init_lstm(rng, spec.hidden_size, spec.n_features) if spec.direction == "bi" else None
    head_bound = 1.0 / np.sqrt(spec.pooled_dim)
    head_w = rng.uniform(-head_bound, head_bound, (spec.output_dim, spec.pooled_dim))
    head_b = np.zeros(spec.output_dim)
    return ModelParams(forward, backward, head_w, head_b)


def fingerprint(params: ModelParams) -> str:
    digest = hashlib.blake2b(digest_size=16)
    for name, tensor in params.named_tensors().items():
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(tensor, dtype=np.float64).tobytes())
    return digest.hexdigest()


def check_params(spec: ModelSpec, params: ModelParams) -> None:
    H, F = spec.hidden_size, spec.n_features
    expected = {}
    for prefix in ("forward", "backward") if spec.direction == "bi" else ("forward",):
        for gate in GATES:
            expected[f"{prefix}.w_{gate}"] = (H, F)
            expected[f"{prefix}.u_{gate}"] = (H, H)
            expected[f"{prefix}.b_{gate}"] = (H,)
    expected["head.w"] = (spec.output_dim, spec.pooled_dim)
    expected["head.b"] = (spec.output_dim,)
    actual = {k: v.shape for k, v in params.named_tensors().items()}
    if actual != expected:
        raise ShapeMismatch(f"parameters do not match {spec}: {actual} != {expected}")


# Forward -------------------------------------------------------------------

def cell_forward(x: np.ndarray, prev: LstmState, params: LstmParams) -> Tuple[LstmState, CellCache]:
    """One LSTM step; ``x`` is (F,) or (B, F), state is (H,) or (B, H)."""
    if x.shape[-1] != params.n_features or prev.h.shape[-1] != params.hidden_size or prev.c.shape != prev.h.shape:
        raise ShapeMismatch(
            f"input {x.shape} / state {prev.h.shape},{prev.c.shape} do not fit H={params.hidden_size}, F={params.n_features}"
        )
    h_prev, c_prev = prev.h, prev.c
    i = _sigmoid(x @ params.w_i.T + h_prev @ params.u_i.T + params.b_i)
    f = _sigmoid(x @ params.w_f.T + h_prev @ params.u_f.T + params.b_f)
    o = _sigmoid(x @ params.w_o.T + h_prev @ params.u_o.T + params.b_o)
    g = np.tanh(x @ params.w_g.T + h_prev @ params.u_g.T + params.b_g)
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    if not (np.isfinite(c).all() and np.isfinite(h).all()):
        raise NonFiniteActivation("non-finite cell or hidden state; training has diverged")
    return LstmState(h, c), CellCache(x, h_prev, c_prev, i, f, o, g, c, tanh_c)


def _as_batch(windows: np.ndarray, spec: ModelSpec) -> Tuple[np.ndarray, bool]:
    windows = np.asarray(windows, dtype=float)
    single = windows.ndim == 2
    batch = windows[None] if single else windows
    if batch.ndim != 3 or batch.shape[1] < 1 or batch.shape[2] != spec.n_features:
        raise ShapeMismatch(f"expected (W, {spec.n_features}) or (B, W, {spec.n_features}) input, got {windows.shape}")
    return batch, single


def _run_direction(batch: np.ndarray, params: LstmParams) -> Tuple[np.ndarray, List[CellCache]]:
    size = (batch.shape[0], params.hidden_size)
    state = LstmState(np.zeros(size), np.zeros(size))
    steps: List[CellCache] = []
    for t in range(batch.shape[1]):
        state, step = cell_forward(batch[:, t, :], state, params)
        steps.append(step)
    return state.h, steps


def sequence_forward(windows: np.ndarray, spec: ModelSpec, params: ModelParams) -> Tuple[np.ndarray, ForwardCache]:
    """Pooled representation: final h, or [h_forward || h_backward] when bidirectional.

    The backward direction reads the window in reverse; both start from zeros.
    """
    check_params(spec, params)
    batch, single = _as_batch(windows, spec)
    h_forward, forward_steps = _run_direction(batch, params.forward)
    backward_steps = None
    pooled = h_forward
    if spec.direction == "bi":
        h_backward, backward_steps = _run_direction(batch[:, ::-1, :], params.backward)
        pooled = np.concatenate([h_forward, h_backward], axis=1)
    preds = (pooled @ params.head_w.T + params.head_b)[:, 0]
    cache = ForwardCache(fingerprint(params), batch, forward_steps, backward_steps, pooled, preds)
    return (pooled[0] if single else pooled), cache


def predict(windows: np.ndarray, spec: ModelSpec, params: ModelParams):
    """Linear head over the pooled state: a float for one window, (B,) for a batch."""
    _, cache = sequence_forward(windows, spec, params)
    return float(cache.preds[0]) if np.asarray(windows).ndim == 2 else cache.preds


def predict_batched(windows: np.ndarray, spec: ModelSpec, params: ModelParams, batch_size: int = 512) -> np.ndarray:
    out = [predict(windows[start:start + batch_size], spec, params) for start in range(0, len(windows), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


# Backward ------------------------------------------------------------------

def _bptt(steps: List[CellCache], dh_final: np.ndarray, params: LstmParams) -> LstmParams:
    grads = {name: np.zeros_like(getattr(params, name)) for name in LSTM_TENSOR_NAMES}
    dh = dh_final
    dc = np.zeros_like(dh_final)
    for step in reversed(steps):
        do = dh * step.tanh_c
        dc = dc + dh * step.o * (1.0 - step.tanh_c ** 2)
        pre = {
            "i": dc * step.g * step.i * (1.0 - step.i),
            "f": dc * step.c_prev * step.f * (1.0 - step.f),
            "o": do * step.o * (1.0 - step.o),
            "g": dc * step.i * (1.0 - step.g ** 2),
        }
        dh = np.zeros_like(dh)
        for gate in GATES:
            grads[f"w_{gate}"] += pre[gate].T @ step.x
            grads[f"u_{gate}"] += pre[gate].T @ step.h_prev
            grads[f"b_{gate}"] += pre[gate].sum(axis=0)
            dh += pre[gate] @ getattr(params, f"u_{gate}")
        dc = dc * step.f
    return LstmParams(**grads)


def backward(
    windows: np.ndarray,
    targets,
    spec: ModelSpec,
    params: ModelParams,
    cache: Optional[ForwardCache] = None,
) -> Tuple[ModelParams, float]:
    """Gradients of the batch MSE with respect to every parameter tensor, plus the loss."""
    if cache is None:
        _, cache = sequence_forward(windows, spec, params)
    batch, _ = _as_batch(windows, spec)
    if cache.fingerprint != fingerprint(params) or cache.windows.shape != batch.shape or not np.array_equal(cache.windows, batch):
        raise StaleCache("forward cache was produced for different parameters or inputs")
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if targets.shape != cache.preds.shape:
        raise ShapeMismatch(f"targets {targets.shape} do not match predictions {cache.preds.shape}")

    residual = cache.preds - targets
    loss = float(np.mean(residual ** 2))
    dpred = 2.0 * residual / len(residual)
    head_w = dpred[None, :] @ cache.pooled
    head_b = np.array([dpred.sum()])
    dpooled = dpred[:, None] * params.head_w[0][None, :]

    H = spec.hidden_size
    forward = _bptt(cache.forward_steps, dpooled[:, :H], params.forward)
    backward_grads = None
    if spec.direction == "bi":
        backward_grads = _bptt(cache.backward_steps, dpooled[:, H:], params.backward)
    return ModelParams(forward, backward_grads, head_w, head_b), loss


# Checkpoints ---------------------------------------------------------------

def save_tensors(path: str | Path, header: dict, tensors: Dict[str, np.ndarray]) -> Path:
    """Versioned container: magic, version, JSON header, little-endian float64 payloads.

    The header's ``tensors`` entry lists (name, shape) in payload order.
    """
    header = dict(header)
    header["tensors"] = [{"name": name, "shape": list(t.shape)} for name, t in tensors.items()]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
        handle.write(header_bytes)
        for tensor in tensors.values():
            handle.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    return path


def load_tensors(path: str | Path) -> Tuple[dict, Dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    offset = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<II", raw, offset)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset += 8
    header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    offset += header_len
    tensors: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(float)
        offset += 8 * count
    return header, tensors


def save_checkpoint(path: str | Path, spec: ModelSpec, params: ModelParams, extra: Optional[dict] = None) -> Path:
    header = {
        "kind": "model",
        "direction": spec.direction,
        "hidden_size": spec.hidden_size,
        "n_features": spec.n_features,
        "output_dim": spec.output_dim,
    }
    header.update(extra or {})
    return save_tensors(path, header, params.named_tensors())


def load_checkpoint(path: str | Path) -> Tuple[ModelSpec, ModelParams, dict]:
    header, tensors = load_tensors(path)
    spec = ModelSpec(header["direction"], header["hidden_size"], header["n_features"], header.get("output_dim", 1))
    params = ModelParams.from_named(tensors)
    check_params(spec, params)
    logger.debug("loaded %s: %s H=%d F=%d", path, spec.direction, spec.hidden_size, spec.n_features)
    return spec, params, header
