"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from .model import backward, forward, loss, trainable_names


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    """``|a - b| / max(|a| + |b|, floor)`` elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


def numerical_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = f()
        x[i] = old - step
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2.0 * step)
    return g


def model_gradients(spec, params, x, target, kind: str = "mse", step: float = 1e-5, precision=np.longdouble):
    """Analytic and numerical gradients of ``loss(forward(x), target)``.

    Returns ``(analytic, numeric)`` dicts over the trainable parameters plus
    the key ``"input"``.  Batch norm runs in training mode on both paths.
    The analytic pass runs in float64; the differences are evaluated in
    ``precision`` (extended by default) so that cancellation in
    ``f(x + h) - f(x - h)`` does not swamp gradients near zero.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    x = np.array(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)

    out, cache = forward(spec, params, x, train=True)
    _, dout = loss(out[..., 0], target, kind)
    analytic, dx = backward(spec, params, cache, dout[..., None], input_grad=True)
    analytic = dict(analytic, input=dx)

    hp = {k: v.astype(precision) for k, v in params.items()}
    hx = x.astype(precision)
    ht = target.astype(precision)

    def value():
        out, _ = forward(spec, hp, hx, train=True)
        return loss(out[..., 0], ht, kind)[0]

    numeric = {name: numerical_gradient(value, hp[name], step) for name in trainable_names(spec)}
    numeric["input"] = numerical_gradient(value, hx, step)
    return analytic, {k: v.astype(np.float64) for k, v in numeric.items()}


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-8) -> float:
    return max(float(relative_error(analytic[k], numeric[k], floor).max()) for k in numeric)
