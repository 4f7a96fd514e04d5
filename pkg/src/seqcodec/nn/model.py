"""Layered recurrent networks: specification, initialisation, forward and backward.

Tensors are float64 arrays shaped ``(batch, time, feature)``.  Parameters live
in a flat ``dict`` keyed ``"<layer>.<name>"`` (recurrent layers add a
``fwd``/``bwd`` direction segment); batch-norm running statistics sit in the
same dict but are never trained.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as sigmoid

from .cells import N_GATES, recurrent_backward, recurrent_forward

BN_EPS = 1e-5
BN_MOMENTUM = 0.99


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Recurrent:
    cell: str = "gru"
    hidden: int = 64
    bidirectional: bool = True

    def __post_init__(self):
        if self.cell not in N_GATES:
            raise ModelError(f"unknown cell {self.cell!r}")
        if self.hidden < 1:
            raise ModelError("hidden width must be >= 1")

    @property
    def directions(self) -> tuple[str, ...]:
        return ("fwd", "bwd") if self.bidirectional else ("fwd",)


@dataclass(frozen=True)
class BatchNorm:
    pass


@dataclass(frozen=True)
class Dense:
    """Single sigmoid output unit applied at every time step."""


@dataclass(frozen=True)
class ModelSpec:
    input_width: int
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_width < 1:
            raise ModelError("input width must be >= 1")
        if not self.layers or not isinstance(self.layers[-1], Dense):
            raise ModelError("the last layer must be Dense")
        if any(isinstance(l, Dense) for l in self.layers[:-1]):
            raise ModelError("Dense is only allowed as the output layer")
        for l in self.layers:
            if not isinstance(l, (Recurrent, BatchNorm, Dense)):
                raise ModelError(f"unsupported layer {l!r}")

    def widths(self) -> list[int]:
        """Input width of every layer, followed by the output width."""
        w = [self.input_width]
        for layer in self.layers:
            if isinstance(layer, Recurrent):
                w.append(layer.hidden * len(layer.directions))
            elif isinstance(layer, Dense):
                w.append(1)
            else:
                w.append(w[-1])
        return w

    def to_dict(self) -> dict:
        layers = []
        for l in self.layers:
            if isinstance(l, Recurrent):
                layers.append({"kind": "recurrent", "cell": l.cell, "hidden": l.hidden,
                               "bidirectional": l.bidirectional})
            elif isinstance(l, BatchNorm):
                layers.append({"kind": "batchnorm"})
            else:
                layers.append({"kind": "dense_sigmoid"})
        return {"input_width": self.input_width, "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        layers = []
        for l in d["layers"]:
            kind = l["kind"]
            if kind == "recurrent":
                layers.append(Recurrent(l["cell"], int(l["hidden"]), bool(l["bidirectional"])))
            elif kind == "batchnorm":
                layers.append(BatchNorm())
            elif kind == "dense_sigmoid":
                layers.append(Dense())
            else:
                raise ModelError(f"unknown layer kind {kind!r}")
        return cls(int(d["input_width"]), tuple(layers))


def stacked_decoder(hidden=64, depth=2, cell="gru", bidirectional=True, batchnorm=True, input_width=2):
    """``depth`` recurrent layers, each optionally followed by batch norm, then a sigmoid unit.

    The defaults give the two-layer bi-GRU decoder for rate-1/2 codes; use
    ``input_width=3`` for decoders that also read a prior LLR per bit.
    """
    layers = []
    for _ in range(depth):
        layers.append(Recurrent(cell, hidden, bidirectional))
        if batchnorm:
            layers.append(BatchNorm())
    layers.append(Dense())
    return ModelSpec(input_width, tuple(layers))


def parameter_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    shapes = {}
    widths = spec.widths()
    for i, layer in enumerate(spec.layers):
        fin = widths[i]
        if isinstance(layer, Recurrent):
            gh = N_GATES[layer.cell] * layer.hidden
            for d in layer.directions:
                shapes[f"{i}.{d}.W"] = (fin, gh)
                shapes[f"{i}.{d}.U"] = (layer.hidden, gh)
                shapes[f"{i}.{d}.bx"] = (gh,)
                shapes[f"{i}.{d}.bh"] = (gh,)
        elif isinstance(layer, BatchNorm):
            for name in ("gamma", "beta", "running_mean", "running_var"):
                shapes[f"{i}.{name}"] = (fin,)
        else:
            shapes[f"{i}.W"] = (fin, 1)
            shapes[f"{i}.b"] = (1,)
    return shapes


def is_trainable(name: str) -> bool:
    return not name.endswith(("running_mean", "running_var"))


def trainable_names(spec: ModelSpec) -> list[str]:
    return [n for n in parameter_shapes(spec) if is_trainable(n)]


def count_parameters(spec: ModelSpec) -> int:
    return sum(int(np.prod(s)) for n, s in parameter_shapes(spec).items() if is_trainable(n))


def init_params(spec: ModelSpec, seed: int = 0) -> dict[str, np.ndarray]:
    """Glorot-uniform weights (one bound per gate matrix), zero biases,
    unit batch-norm gain and running statistics (0, 1)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(spec).items():
        kind = name.rsplit(".", 1)[1]
        if kind in ("W", "U"):
            fin = shape[0]
            layer = spec.layers[int(name.split(".")[0])]
            h = layer.hidden if isinstance(layer, Recurrent) else shape[1]
            bound = np.sqrt(6.0 / (fin + h))
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif kind in ("gamma", "running_var"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def _as_float(a):
    # float64 unless the caller passes extended precision (finite-difference checks do)
    a = np.asarray(a)
    return a.astype(np.result_type(a.dtype, np.float64), copy=False)


def _check_input(spec, x):
    x = _as_float(x)
    if x.ndim != 3:
        raise ModelError("input must be shaped (batch, time, feature)")
    if x.shape[2] != spec.input_width:
        raise ModelError(f"input width {x.shape[2]} does not match model width {spec.input_width}")
    if x.shape[1] < 1:
        raise ModelError("sequence length must be >= 1")
    return x


def forward(spec: ModelSpec, params, x, train: bool = False):
    """Run the network on ``x (B, K, F)``; returns ``(out (B, K, 1), cache)``.

    In training mode batch norm uses per-feature statistics over batch and
    time, and ``cache["running"]`` holds the updated running statistics
    (``params`` is never mutated).  Inference mode uses the running statistics.
    """
    h = _check_input(spec, x)
    caches = []
    running = {}
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Recurrent):
            outs, lc = [], []
            for d in layer.directions:
                p = f"{i}.{d}."
                o, c = recurrent_forward(
                    layer.cell, h, params[p + "W"], params[p + "U"], params[p + "bx"], params[p + "bh"],
                    reverse=(d == "bwd"),
                )
                outs.append(o)
                lc.append(c)
            caches.append(lc)
            h = np.concatenate(outs, axis=2) if len(outs) > 1 else outs[0]
        elif isinstance(layer, BatchNorm):
            gamma, beta = params[f"{i}.gamma"], params[f"{i}.beta"]
            if train:
                mu = h.mean(axis=(0, 1))
                var = h.var(axis=(0, 1))
                rm, rv = params[f"{i}.running_mean"], params[f"{i}.running_var"]
                running[f"{i}.running_mean"] = BN_MOMENTUM * rm + (1 - BN_MOMENTUM) * mu
                running[f"{i}.running_var"] = BN_MOMENTUM * rv + (1 - BN_MOMENTUM) * var
            else:
                mu, var = params[f"{i}.running_mean"], params[f"{i}.running_var"]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (h - mu) * inv
            caches.append((xhat, inv))
            h = gamma * xhat + beta
        else:
            logits = h @ params[f"{i}.W"] + params[f"{i}.b"]
            out = sigmoid(logits)
            caches.append((h, out))
            h = out
    return h, {"train": train, "layers": caches, "running": running}


def backward(spec: ModelSpec, params, cache, dout, input_grad: bool = False):
    """Backpropagate ``dLoss/dOut`` through a training-mode forward pass.

    Returns a dict of gradients for every trainable parameter, plus the
    gradient with respect to the network input when ``input_grad`` is set.
    """
    if not cache.get("train"):
        raise ModelError("backward needs the cache of a training-mode forward pass")
    grads = {}
    d = np.asarray(dout, dtype=np.float64)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, lc = spec.layers[i], cache["layers"][i]
        if isinstance(layer, Dense):
            hin, out = lc
            dl = d * out * (1.0 - out)
            F = hin.shape[2]
            grads[f"{i}.W"] = hin.reshape(-1, F).T @ dl.reshape(-1, 1)
            grads[f"{i}.b"] = dl.sum(axis=(0, 1))
            d = dl @ params[f"{i}.W"].T
        elif isinstance(layer, BatchNorm):
            xhat, inv = lc
            grads[f"{i}.gamma"] = (d * xhat).sum(axis=(0, 1))
            grads[f"{i}.beta"] = d.sum(axis=(0, 1))
            dxhat = d * params[f"{i}.gamma"]
            N = xhat.shape[0] * xhat.shape[1]
            d = (inv / N) * (
                N * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1))
            )
        else:
            H = layer.hidden
            dx = 0.0
            for j, direction in enumerate(layer.directions):
                p = f"{i}.{direction}."
                ddir = d[:, :, j * H : (j + 1) * H]
                gx, gW, gU, gbx, gbh = recurrent_backward(ddir, lc[j])
                grads[p + "W"], grads[p + "U"], grads[p + "bx"], grads[p + "bh"] = gW, gU, gbx, gbh
                dx = dx + gx
            d = dx
    if input_grad:
        return grads, d
    return grads


# --- losses and optimisation ----------------------------------------------

def loss(pred, target, kind: str = "mse"):
    """Mean loss over all elements and its gradient with respect to ``pred``."""
    p = _as_float(pred)
    t = _as_float(target).reshape(p.shape)
    n = p.size
    if kind == "mse":
        diff = p - t
        return np.mean(diff * diff)[()], 2.0 * diff / n
    if kind == "bce":
        pc = np.clip(p, 1e-12, 1.0 - 1e-12)
        val = -np.mean(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
        grad = (pc - t) / (pc * (1.0 - pc)) / n
        grad = np.where((p == pc), grad, 0.0)
        return val[()], grad
    raise ModelError(f"unknown loss {kind!r}")


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads, max_norm: float):
    """Scale all gradients by ``max_norm / norm`` when the joint L2 norm exceeds it."""
    if not max_norm > 0:
        raise ModelError("max_norm must be > 0")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params, names):
        return cls({n: np.zeros_like(params[n]) for n in names}, {n: np.zeros_like(params[n]) for n in names})


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update; returns new ``(params, state)``."""
    t = state.t + 1
    new_params = dict(params)
    m, v = {}, {}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        mhat = m[name] / c1
        vhat = v[name] / c2
        new_params[name] = params[name] - lr * mhat / (np.sqrt(vhat) + eps)
    return new_params, AdamState(m, v, t)
