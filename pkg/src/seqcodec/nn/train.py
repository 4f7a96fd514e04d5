"""Mini-batch training, prediction and checkpoint files."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (
    AdamState,
    ModelError,
    ModelSpec,
    adam_step,
    backward,
    clip_global_norm,
    forward,
    init_params,
    loss,
    parameter_shapes,
    trainable_names,
)

LOSS_KINDS = {"mse_posterior": "mse", "mse_bits": "mse", "bce": "bce"}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 200
    epochs: int = 10
    clip_norm: float = 1.0
    loss: str = "mse_posterior"

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ModelError(f"unknown loss kind {self.loss!r}")
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0 or not self.clip_norm > 0:
            raise ModelError("invalid training configuration")


def train(spec: ModelSpec, inputs, targets, cfg: TrainConfig = TrainConfig(), seed: int = 0,
          params=None, callback=None):
    """Fit ``spec`` to ``inputs (N, K, F)`` / ``targets (N, K)``.

    Mini-batches are reshuffled every epoch from a generator seeded with
    ``seed``; the same generator initialises ``params`` when none are given.
    Returns ``(params, history)`` where ``history`` is the epoch-mean loss.
    """
    X = np.asarray(inputs, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.shape[0] == 0:
        raise ModelError("empty dataset")
    if X.ndim != 3 or Y.shape != X.shape[:2]:
        raise ModelError("expected inputs (N, K, F) and targets (N, K)")
    if params is None:
        params = init_params(spec, seed)
    params = {k: v.copy() for k, v in params.items()}
    names = trainable_names(spec)
    state = AdamState.zeros_like(params, names)
    kind = LOSS_KINDS[cfg.loss]
    rng = np.random.default_rng([seed, 1])
    N = X.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            out, cache = forward(spec, params, X[idx], train=True)
            value, dout = loss(out[..., 0], Y[idx], kind)
            grads = backward(spec, params, cache, dout[..., None])
            grads = clip_global_norm(grads, cfg.clip_norm)
            params, state = adam_step(params, grads, state, lr=cfg.learning_rate)
            params.update(cache["running"])
            total += value * idx.size
        history.append(total / N)
        if callback is not None:
            callback(epoch, history[-1], params)
    return params, history


def predict_proba(spec: ModelSpec, params, inputs, batch_size: int = 1000) -> np.ndarray:
    """Inference-mode outputs ``(N, K)``; a single ``(K, F)`` input gives ``(K,)``."""
    X = np.asarray(inputs, dtype=np.float64)
    squeeze = X.ndim == 2
    if squeeze:
        X = X[None]
    parts = [forward(spec, params, X[s : s + batch_size])[0][..., 0] for s in range(0, X.shape[0], batch_size)]
    out = np.concatenate(parts, axis=0)
    return out[0] if squeeze else out


def predict_bits(spec: ModelSpec, params, inputs, batch_size: int = 1000):
    """Hard decisions (1 iff output > 0.5) and the posterior estimates."""
    p = predict_proba(spec, params, inputs, batch_size)
    return (p > 0.5).astype(np.int64), p


# --- checkpoints -------------------------------------------------------------
#
# Layout (all integers little-endian):
#   bytes 0..7    magic b"SEQCODEC"
#   bytes 8..11   uint32 format version
#   bytes 12..19  uint64 header length H
#   next H bytes  UTF-8 JSON {"spec": ..., "tensors": [{"name", "shape", "offset"}], "meta": ...}
#   remainder     float64 little-endian tensor data, row-major, at the listed
#                 offsets (counted in elements from the start of the data block)

MAGIC = b"SEQCODEC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_model(path, spec: ModelSpec, params, meta: dict | None = None) -> None:
    shapes = parameter_shapes(spec)
    tensors, blobs, offset = [], [], 0
    for name in sorted(shapes):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        if arr.shape != shapes[name]:
            raise CheckpointError(f"{name}: shape {arr.shape} != {shapes[name]}")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.size
    header = json.dumps(
        {"spec": spec.to_dict(), "tensors": tensors, "meta": meta or {}}, sort_keys=True
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_model(path):
    """Return ``(spec, params, meta)``; raises :class:`CheckpointError` on any defect."""
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(raw) < 20 + hlen:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(raw[20 : 20 + hlen])
        spec = ModelSpec.from_dict(header["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    data = raw[20 + hlen :]
    expected = parameter_shapes(spec)
    params = {}
    total = 0
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        if expected.get(t["name"]) != shape:
            raise CheckpointError(f"tensor {t['name']} has unexpected shape {shape}")
        size = int(np.prod(shape))
        start, stop = 8 * t["offset"], 8 * (t["offset"] + size)
        if stop > len(data):
            raise CheckpointError("truncated checkpoint data")
        params[t["name"]] = np.frombuffer(data[start:stop], dtype="<f8").reshape(shape).astype(np.float64)
        total += size
    if set(params) != set(expected):
        raise CheckpointError("checkpoint is missing tensors")
    if 8 * total != len(data):
        raise CheckpointError("checkpoint data length mismatch")
    return spec, params, header.get("meta", {})


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
