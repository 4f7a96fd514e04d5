"""Recurrent cells with hand-written backpropagation through time.

Every cell keeps its gates stacked along the last axis: an input matrix
``W (F, G*h)``, a recurrent matrix ``U (h, G*h)`` and two bias vectors
``bx``/``bh`` of length ``G*h``.  Gate order is ``z, r, n`` for the GRU,
``i, f, g, o`` for the LSTM and a single ``n`` for the vanilla RNN.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit as sigmoid

N_GATES = {"gru": 3, "lstm": 4, "rnn": 1}


def gru_cell(x, h, params):
    """One GRU update: ``h' = (1 - z) * h + z * tanh(W_n x + U_n (r * h) + b_n)``."""
    W, U, bx, bh = params["W"], params["U"], params["bx"], params["bh"]
    H = h.shape[-1]
    gx = x @ W + bx
    gh = h @ U[:, : 2 * H] + bh[: 2 * H]
    z = sigmoid(gx[..., :H] + gh[..., :H])
    r = sigmoid(gx[..., H : 2 * H] + gh[..., H:])
    n = np.tanh(gx[..., 2 * H :] + (r * h) @ U[:, 2 * H :] + bh[2 * H :])
    return (1.0 - z) * h + z * n


def recurrent_forward(cell, x, W, U, bx, bh, reverse=False):
    """Run ``cell`` over ``x (B, K, F)``; returns hidden states ``(B, K, h)`` and a cache."""
    if reverse:
        x = x[:, ::-1]
    B, K, _ = x.shape
    H = U.shape[0]
    gx = x @ W + bx
    hs = np.empty((B, K + 1, H), dtype=gx.dtype)
    hs[:, 0] = 0.0
    acts = []
    if cell == "lstm":
        cs = np.zeros((B, K + 1, H), dtype=gx.dtype)
    for t in range(K):
        hp = hs[:, t]
        if cell == "gru":
            gh = hp @ U[:, : 2 * H] + bh[: 2 * H]
            z = sigmoid(gx[:, t, :H] + gh[:, :H])
            r = sigmoid(gx[:, t, H : 2 * H] + gh[:, H:])
            n = np.tanh(gx[:, t, 2 * H :] + (r * hp) @ U[:, 2 * H :] + bh[2 * H :])
            hs[:, t + 1] = (1.0 - z) * hp + z * n
            acts.append((z, r, n))
        elif cell == "lstm":
            a = gx[:, t] + hp @ U + bh
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H : 2 * H])
            g = np.tanh(a[:, 2 * H : 3 * H])
            o = sigmoid(a[:, 3 * H :])
            cs[:, t + 1] = f * cs[:, t] + i * g
            tc = np.tanh(cs[:, t + 1])
            hs[:, t + 1] = o * tc
            acts.append((i, f, g, o, tc))
        elif cell == "rnn":
            hs[:, t + 1] = np.tanh(gx[:, t] + hp @ U + bh)
        else:
            raise ValueError(f"unknown cell {cell!r}")
    out = hs[:, 1:]
    cache = {"cell": cell, "x": x, "hs": hs, "acts": acts, "W": W, "U": U, "reverse": reverse}
    if cell == "lstm":
        cache["cs"] = cs
    if reverse:
        out = out[:, ::-1]
    return out, cache


def recurrent_backward(dout, cache):
    """Gradients ``(dx, dW, dU, dbx, dbh)`` for :func:`recurrent_forward`."""
    cell, x, hs, acts = cache["cell"], cache["x"], cache["hs"], cache["acts"]
    W, U = cache["W"], cache["U"]
    if cache["reverse"]:
        dout = dout[:, ::-1]
    B, K, F = x.shape
    H = U.shape[0]
    G = U.shape[1] // H
    dgx = np.empty((B, K, G * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, H))
    if cell == "lstm":
        cs = cache["cs"]
        dc_next = np.zeros((B, H))
    for t in range(K - 1, -1, -1):
        dh = dout[:, t] + dh_next
        hp = hs[:, t]
        if cell == "gru":
            z, r, n = acts[t]
            dan = dh * z * (1.0 - n * n)
            dz = dh * (n - hp)
            dhp = dh * (1.0 - z)
            dU[:, 2 * H :] += (r * hp).T @ dan
            drh = dan @ U[:, 2 * H :].T
            dhp += drh * r
            daz = dz * z * (1.0 - z)
            dar = drh * hp * r * (1.0 - r)
            dzr = np.concatenate([daz, dar], axis=1)
            dU[:, : 2 * H] += hp.T @ dzr
            dhp += dzr @ U[:, : 2 * H].T
            dgx[:, t] = np.concatenate([dzr, dan], axis=1)
        elif cell == "lstm":
            i, f, g, o, tc = acts[t]
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * cs[:, t] * f * (1.0 - f),
                    dc * i * (1.0 - g * g),
                    dh * tc * o * (1.0 - o),
                ],
                axis=1,
            )
            dc_next = dc * f
            dU += hp.T @ da
            dhp = da @ U.T
            dgx[:, t] = da
        else:
            hn = hs[:, t + 1]
            da = dh * (1.0 - hn * hn)
            dU += hp.T @ da
            dhp = da @ U.T
            dgx[:, t] = da
        dh_next = dhp
    flat = dgx.reshape(B * K, G * H)
    dW = x.reshape(B * K, F).T @ flat
    dbx = flat.sum(axis=0)
    dbh = dbx.copy()
    dx = dgx @ W.T
    if cache["reverse"]:
        dx = dx[:, ::-1]
    return dx, dW, dU, dbx, dbh
