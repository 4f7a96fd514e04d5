"""Reference decoders: Viterbi, log-MAP BCJR, iterative turbo, brute-force oracles.

All decoders accept a single block ``(K, n)`` or a batch ``(B, K, n)`` and
return arrays with the matching leading shape.  Bit LLRs follow
``log P(b=1) - log P(b=0)``; a hard decision is 1 only for a strictly
positive LLR.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .channels import channel_llr
from .codes import (
    ConvCodeSpec,
    Trellis,
    TurboCodeSpec,
    build_trellis,
    deinterleave,
    encode_direct,
    interleave,
)


class DecodeError(ValueError):
    pass


@dataclass
class DecodeResult:
    bits: np.ndarray
    llr: np.ndarray
    trace: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    @property
    def posterior(self) -> np.ndarray:
        return expit(self.llr)


@dataclass
class BCJRResult:
    log_p1: np.ndarray
    log_p0: np.ndarray
    extrinsic: np.ndarray

    @property
    def llr(self) -> np.ndarray:
        return self.log_p1 - self.log_p0

    @property
    def posterior(self) -> np.ndarray:
        return np.exp(self.log_p1)

    @property
    def bits(self) -> np.ndarray:
        return hard_decision(self.llr)


def hard_decision(llr) -> np.ndarray:
    return (np.asarray(llr) > 0).astype(np.int64)


def _batched(x, n_streams: int):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x, squeeze = x[None], True
    elif x.ndim == 3:
        squeeze = False
    else:
        raise DecodeError("expected received symbols shaped (K, n) or (B, K, n)")
    if x.shape[-1] != n_streams:
        raise DecodeError(f"expected {n_streams} symbols per step, got {x.shape[-1]}")
    return x, squeeze


def viterbi_decode(trellis: Trellis, received, sigma: float = 1.0) -> DecodeResult:
    """Maximum-likelihood message under Gaussian noise (maximises sum y*c).

    Starts in state 0 with a free end state.  Equal path metrics are
    resolved toward the lexicographically smallest message: each survivor
    carries the rank of its prefix among all survivors, and a tie prefers the
    smaller ``(prefix rank, input bit)``.  ``sigma`` only scales the metric and
    is accepted for interface symmetry.  ``llr`` carries +-1 per hard bit.
    """
    if not sigma > 0:
        raise DecodeError("sigma must be > 0")
    y, squeeze = _batched(received, trellis.n_streams)
    B, K, _ = y.shape
    S = trellis.num_states
    ps, pu = trellis.prev_state, trellis.prev_input
    metric = np.full((B, S), -np.inf)
    metric[:, 0] = 0.0
    rank = np.zeros((B, S), dtype=np.int64)
    choice = np.empty((B, K, S), dtype=np.int8)
    rows = np.arange(B)[:, None]
    for k in range(K):
        bm = np.einsum("bn,sun->bsu", y[:, k], trellis.outputs)
        cand = metric[:, ps] + bm[:, ps, pu]  # (B, S, 2)
        key = rank[:, ps] * 2 + pu  # (B, S, 2)
        pick1 = (cand[..., 1] > cand[..., 0]) | (
            (cand[..., 1] == cand[..., 0]) & (key[..., 1] < key[..., 0])
        )
        j = pick1.astype(np.int64)
        choice[:, k] = j
        metric = np.take_along_axis(cand, j[..., None], axis=2)[..., 0]
        newkey = np.take_along_axis(key, j[..., None], axis=2)[..., 0]
        rank = np.argsort(np.argsort(newkey, axis=1, kind="stable"), axis=1, kind="stable")
    best = metric.max(axis=1, keepdims=True)
    state = np.where(metric == best, rank, S).argmin(axis=1)
    bits = np.empty((B, K), dtype=np.int64)
    for k in range(K - 1, -1, -1):
        j = choice[rows[:, 0], k, state]
        bits[:, k] = pu[state, j]
        state = ps[state, j]
    llr = 2.0 * bits - 1.0
    if squeeze:
        return DecodeResult(bits[0], llr[0])
    return DecodeResult(bits, llr)


def bcjr_decode(trellis: Trellis, symbol_llrs, prior=None) -> BCJRResult:
    """Exact bit posteriors by the log-domain forward-backward recursion.

    ``symbol_llrs`` has shape ``(..., K, n)``; ``prior`` holds a-priori bit
    LLRs ``(..., K)`` (``None`` means uniform).  Forward messages start in
    state 0 and backward messages start uniform because blocks are not
    terminated.  Extrinsic output removes the prior and, for systematic codes,
    the systematic channel LLR.
    """
    L, squeeze = _batched(symbol_llrs, trellis.n_streams)
    B, K, _ = L.shape
    La = np.zeros((B, K)) if prior is None else np.asarray(prior, dtype=np.float64).reshape(B, K)
    if not (np.all(np.isfinite(L)) and np.all(np.isfinite(La))):
        raise DecodeError("BCJR inputs must be finite")
    S = trellis.num_states
    ns, ps, pu = trellis.next_state, trellis.prev_state, trellis.prev_input

    # gamma[b, k, s, u] = log p(y_k | edge) + log P(u), both up to per-step constants
    gamma = 0.5 * np.einsum("bkn,sun->bksu", L, trellis.outputs)
    gamma[..., 1] += La[:, :, None]

    alpha = np.empty((B, K + 1, S))
    alpha[:, 0] = -np.inf
    alpha[:, 0, 0] = 0.0
    for k in range(K):
        a = alpha[:, k][:, ps] + gamma[:, k][:, ps, pu]
        a = np.logaddexp(a[..., 0], a[..., 1])
        alpha[:, k + 1] = a - a.max(axis=1, keepdims=True)

    beta = np.empty((B, K + 1, S))
    beta[:, K] = 0.0
    for k in range(K - 1, -1, -1):
        b = gamma[:, k] + beta[:, k + 1][:, ns]
        b = np.logaddexp(b[..., 0], b[..., 1])
        beta[:, k] = b - b.max(axis=1, keepdims=True)

    joint = alpha[:, :K, :, None] + gamma + beta[:, 1:][:, :, ns]  # (B, K, S, 2)
    lse = np.logaddexp.reduce(joint, axis=2)  # (B, K, 2)
    total = np.logaddexp(lse[..., 0], lse[..., 1])
    log_p1 = lse[..., 1] - total
    log_p0 = lse[..., 0] - total
    ext = log_p1 - log_p0 - La
    if trellis.spec.systematic:
        ext = ext - L[..., 0]
    if squeeze:
        return BCJRResult(log_p1[0], log_p0[0], ext[0])
    return BCJRResult(log_p1, log_p0, ext)


def apply_llr_heuristic(llrs, mode: str | None, threshold: float | None):
    """Erasure (zero out ``|L| > T``) or saturation (clip to ``+-T``)."""
    llrs = np.asarray(llrs, dtype=np.float64)
    if mode is None or mode == "none":
        return llrs
    if threshold is None or not threshold > 0:
        raise DecodeError("threshold must be > 0")
    if mode == "erasure":
        return np.where(np.abs(llrs) > threshold, 0.0, llrs)
    if mode == "saturation":
        return np.clip(llrs, -threshold, threshold)
    raise DecodeError(f"unknown heuristic {mode!r}")


def turbo_decode_llr(spec: TurboCodeSpec, symbol_llrs, iterations: int = 6, capture: bool = False) -> DecodeResult:
    """Iterative turbo decoding from symbol LLRs ``(..., K, 3)``.

    Each iteration runs component 1 on (systematic, parity 1) and component 2
    on (interleaved systematic, parity 2), exchanging extrinsic LLRs as
    priors.  ``trace`` holds the posterior LLRs (natural order) after every
    component pass.  With ``capture`` set, ``steps`` holds one
    ``(component_llrs, prior, posterior)`` triple per component decoding, in
    that component's own bit order.
    """
    if iterations < 1:
        raise DecodeError("iterations must be >= 1")
    L, squeeze = _batched(symbol_llrs, 3)
    K = L.shape[1]
    perm = spec.interleaver
    if K != perm.size:
        raise DecodeError(f"block length {K} does not match interleaver size {perm.size}")
    trellis = build_trellis(spec.component)
    sys1 = L[..., 0]
    in1 = L[..., :2]
    in2 = np.stack([interleave(sys1, perm), L[..., 2]], axis=-1)
    ext = np.zeros(sys1.shape)
    trace, steps = [], []
    for _ in range(iterations):
        r1 = bcjr_decode(trellis, in1, ext)
        trace.append(r1.llr)
        if capture:
            steps.append((in1, ext, r1.posterior))
        prior2 = interleave(r1.extrinsic, perm)
        r2 = bcjr_decode(trellis, in2, prior2)
        llr = deinterleave(r2.llr, perm)
        trace.append(llr)
        if capture:
            steps.append((in2, prior2, r2.posterior))
        ext = deinterleave(r2.extrinsic, perm)
    if squeeze:
        trace = [t[0] for t in trace]
        steps = [tuple(a[0] for a in s) for s in steps]
        llr = llr[0]
    return DecodeResult(hard_decision(llr), llr, trace, steps)


def turbo_decode(
    spec: TurboCodeSpec,
    received,
    sigma: float,
    iterations: int = 6,
    heuristic: str | None = None,
    threshold: float | None = None,
) -> DecodeResult:
    """Gaussian-metric turbo decoding, optionally thresholding the symbol LLRs."""
    L = apply_llr_heuristic(channel_llr(received, sigma), heuristic, threshold)
    return turbo_decode_llr(spec, L, iterations)


# --- brute-force oracles ---------------------------------------------------

MAX_EXHAUSTIVE_K = 16


@lru_cache(maxsize=32)
def _codebook(spec: ConvCodeSpec, K: int):
    msgs = np.array(list(itertools.product((0, 1), repeat=K)), dtype=np.int64)
    words = np.stack([encode_direct(spec, m) for m in msgs])
    msgs.setflags(write=False)
    words.setflags(write=False)
    return msgs, words


def _check_k(received, spec):
    y = np.asarray(received, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != spec.n_streams:
        raise DecodeError("expected a single block shaped (K, n)")
    if y.shape[0] > MAX_EXHAUSTIVE_K:
        raise DecodeError(f"exhaustive search refused for K > {MAX_EXHAUSTIVE_K}")
    return y


def exhaustive_map_bit(spec: ConvCodeSpec, received, sigma: float, prior=None) -> np.ndarray:
    """Pr(b_k = 1 | y) by summing over every message (cost 2^K)."""
    y = _check_k(received, spec)
    K = y.shape[0]
    msgs, words = _codebook(spec, K)
    logw = -((y[None] - words) ** 2).sum(axis=(1, 2)) / (2.0 * sigma * sigma)
    if prior is not None:
        La = np.asarray(prior, dtype=np.float64)
        logw = logw + msgs @ La - np.logaddexp(0.0, La).sum()
    out = np.empty(K)
    for k in range(K):
        one = msgs[:, k] == 1
        l1 = np.logaddexp.reduce(logw[one])
        l0 = np.logaddexp.reduce(logw[~one])
        out[k] = expit(l1 - l0)
    return out


def exhaustive_ml_block(spec: ConvCodeSpec, received) -> np.ndarray:
    """Minimum squared-distance message; ties go to the lexicographically smallest."""
    y = _check_k(received, spec)
    msgs, words = _codebook(spec, y.shape[0])
    d = ((y[None] - words) ** 2).sum(axis=(1, 2))
    return msgs[int(np.argmin(d))].copy()
