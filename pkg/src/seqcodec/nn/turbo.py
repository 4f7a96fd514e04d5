"""Neural turbo decoder: stacked prior-aware recurrent layers with interleaving.

Layer ``j`` plays component ``j % 2``.  It reads ``(systematic, parity,
prior LLR)`` in that component's bit order and outputs posteriors.  The
next layer's prior is the extrinsic part ``logit(p) - prior - 2 y_sys /
sigma^2``, permuted into the other component's order and clipped to
``+-prior_clip``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import logit

from ..codes import TurboCodeSpec, deinterleave, interleave, invert_permutation
from .model import AdamState, adam_step, backward, clip_global_norm, forward, loss, trainable_names
from .train import LOSS_KINDS, TrainConfig, train

P_EPS = 1e-6


def _component_inputs(spec: TurboCodeSpec, received):
    y = np.asarray(received, dtype=np.float64)
    if y.ndim == 2:
        y = y[None]
    if y.shape[1] != spec.block_length or y.shape[2] != 3:
        raise ValueError("received words must be shaped (B, K, 3) with K = interleaver size")
    perm = spec.interleaver
    sys2 = interleave(y[..., 0], perm)
    return [(y[..., 0], y[..., 1]), (sys2, y[..., 2])]


def neural_turbo_forward(spec: TurboCodeSpec, layers, received, sigma: float, prior_clip: float = 20.0,
                         train: bool = False):
    """Run the stack; returns final posteriors in natural bit order and a cache."""
    comps = _component_inputs(spec, received)
    perm = spec.interleaver
    B, K = comps[0][0].shape
    prior = np.zeros((B, K))
    scale = 2.0 / (sigma * sigma)
    cache = []
    for j, (mspec, params) in enumerate(layers):
        ys, yp = comps[j % 2]
        x = np.stack([ys, yp, prior], axis=-1)
        out, c = forward(mspec, params, x, train=train)
        p = np.clip(out[..., 0], P_EPS, 1 - P_EPS)
        ext = logit(p) - prior - scale * ys
        nxt = interleave(ext, perm) if j % 2 == 0 else deinterleave(ext, perm)
        clipped = np.clip(nxt, -prior_clip, prior_clip)
        cache.append({"model": c, "p": p, "out": out[..., 0], "mask": np.abs(nxt) < prior_clip})
        prior = clipped
    final = cache[-1]["out"]
    if (len(layers) - 1) % 2 == 1:
        final = deinterleave(final, perm)
    return final, cache


def neural_turbo_backward(spec: TurboCodeSpec, layers, cache, dfinal):
    """Gradients for every layer's parameters given ``dLoss/d(final posterior)``."""
    perm = spec.interleaver
    inv = invert_permutation(perm)
    n = len(layers)
    d_out = np.asarray(dfinal, dtype=np.float64)
    if (n - 1) % 2 == 1:
        d_out = interleave(d_out, perm)
    grads = [None] * n
    d_next_prior = None  # dLoss/d(prior fed into layer j+1), in layer j+1's order
    for j in range(n - 1, -1, -1):
        lc = cache[j]
        d_p = np.zeros_like(lc["p"]) if j < n - 1 else d_out.copy()
        d_prior_direct = 0.0
        if d_next_prior is not None:
            d_nxt = d_next_prior * lc["mask"]
            d_ext = d_nxt[..., inv] if j % 2 == 0 else d_nxt[..., perm]
            p = lc["p"]
            inside = (lc["out"] > P_EPS) & (lc["out"] < 1 - P_EPS)
            d_p = d_p + d_ext / (p * (1 - p)) * inside
            d_prior_direct = -d_ext
        mspec, params = layers[j]
        g, dx = backward(mspec, params, lc["model"], d_p[..., None], input_grad=True)
        grads[j] = g
        d_next_prior = dx[..., 2] + d_prior_direct
    return grads


def pretrain_layers(model_spec, inputs, posteriors, n_layers: int = 2, cfg: TrainConfig = TrainConfig(),
                    seed: int = 0, prior_clip: float = 20.0):
    """Fit one prior-aware layer to (systematic, parity, prior) -> posterior
    triplets and copy it into every position of an ``n_layers`` stack."""
    x = np.array(inputs, dtype=np.float64)
    x[..., 2] = np.clip(x[..., 2], -prior_clip, prior_clip)
    params, history = train(model_spec, x, posteriors, cfg, seed)
    return [(model_spec, {k: v.copy() for k, v in params.items()}) for _ in range(n_layers)], history


def finetune(spec: TurboCodeSpec, layers, received, bits, sigma: float, cfg: TrainConfig = TrainConfig(loss="bce"),
             seed: int = 0, prior_clip: float = 20.0):
    """End-to-end training of the whole stack against the message bits."""
    y = np.asarray(received, dtype=np.float64)
    b = np.asarray(bits, dtype=np.float64)
    layers = [(m, {k: v.copy() for k, v in p.items()}) for m, p in layers]
    states = [AdamState.zeros_like(p, trainable_names(m)) for m, p in layers]
    rng = np.random.default_rng([seed, 2])
    kind = LOSS_KINDS[cfg.loss]
    history = []
    N = y.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(N)
        total = 0.0
        for s in range(0, N, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            final, cache = neural_turbo_forward(spec, layers, y[idx], sigma, prior_clip, train=True)
            value, dfinal = loss(final, b[idx], kind)
            grads = neural_turbo_backward(spec, layers, cache, dfinal)
            flat = {f"{j}/{k}": v for j, g in enumerate(grads) for k, v in g.items()}
            flat = clip_global_norm(flat, cfg.clip_norm)
            new_layers = []
            for j, (m, p) in enumerate(layers):
                g = {k.split("/", 1)[1]: v for k, v in flat.items() if k.startswith(f"{j}/")}
                p, states[j] = adam_step(p, g, states[j], lr=cfg.learning_rate)
                p.update({k: v for k, v in cache[j]["model"]["running"].items()})
                new_layers.append((m, p))
            layers = new_layers
            total += value * idx.size
        history.append(total / N)
    return layers, history


def neural_turbo_decode(spec: TurboCodeSpec, layers, received, sigma: float, prior_clip: float = 20.0,
                        batch_size: int = 500):
    """Hard bits and posteriors from the stack in inference mode."""
    y = np.asarray(received, dtype=np.float64)
    squeeze = y.ndim == 2
    if squeeze:
        y = y[None]
    parts = [neural_turbo_forward(spec, layers, y[s : s + batch_size], sigma, prior_clip)[0]
             for s in range(0, y.shape[0], batch_size)]
    p = np.concatenate(parts)
    bits = (p > 0.5).astype(np.int64)
    return (bits[0], p[0]) if squeeze else (bits, p)
