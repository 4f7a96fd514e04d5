"""Convolutional and turbo encoders as finite-state register machines.

Symbols use the fixed map bit -> 2*bit - 1, so bit 1 is sent as +1.
Encoded sequences are arrays of shape ``(K, n)``: one row per trellis step,
one column per output stream.
"""
from __future__ import annotations

import json
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CodeSpecError(ValueError):
    """Raised for malformed code or interleaver specifications."""


def _octal_to_bits(text: str | int, width: int) -> tuple[int, ...]:
    value = int(str(text), 8) if isinstance(text, str) else int(text)
    if value < 0 or value >= 1 << width:
        raise CodeSpecError(f"octal mask {text!r} does not fit in {width} bits")
    return tuple((value >> (width - 1 - i)) & 1 for i in range(width))


@dataclass(frozen=True)
class ConvCodeSpec:
    """Rate-1/n convolutional code over an m-bit shift register.

    ``feedback`` is a mask over the state ``(s1..sm)``; an all-zero or empty
    mask gives a feed-forward code.  Each generator is a mask over
    ``(a, s1..sm)`` where ``a = b xor (feedback . s)`` is the recursion bit.
    With ``systematic`` set, stream 0 is the message itself and the first
    generator is ignored.
    """

    memory: int
    feedback: tuple[int, ...]
    generators: tuple[tuple[int, ...], ...]
    systematic: bool = False
    name: str = "custom"

    def __post_init__(self):
        m = self.memory
        if m < 1:
            raise CodeSpecError("memory must be >= 1")
        fb = tuple(int(v) for v in self.feedback) or (0,) * m
        if len(fb) != m or any(v not in (0, 1) for v in fb):
            raise CodeSpecError(f"feedback mask must have {m} binary entries")
        if not self.generators:
            raise CodeSpecError("at least one generator is required")
        gens = []
        for g in self.generators:
            g = tuple(int(v) for v in g)
            if len(g) != m + 1 or any(v not in (0, 1) for v in g):
                raise CodeSpecError(f"generator masks must have {m + 1} binary entries")
            gens.append(g)
        object.__setattr__(self, "feedback", fb)
        object.__setattr__(self, "generators", tuple(gens))

    @classmethod
    def from_octal(cls, memory, generators, feedback=None, systematic=False, name="custom"):
        """Build from octal polynomials, MSB = recursion bit ``a``.

        ``feedback`` is the full feedback polynomial including the leading
        ``a`` term (e.g. ``"7"`` for 1 + D + D^2); only its state taps are kept.
        """
        gens = tuple(_octal_to_bits(g, memory + 1) for g in generators)
        if feedback is None:
            fb = (0,) * memory
        else:
            fb = _octal_to_bits(feedback, memory + 1)[1:]
        return cls(memory, fb, gens, systematic, name)

    @property
    def n_streams(self) -> int:
        return len(self.generators)

    @property
    def rate(self) -> float:
        return 1.0 / self.n_streams

    @property
    def num_states(self) -> int:
        return 1 << self.memory

    @property
    def recursive(self) -> bool:
        return any(self.feedback)

    def step(self, state: tuple[int, ...], bit: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """One register update; returns ``(next_state, output_bits)``."""
        a = bit
        for f, s in zip(self.feedback, state):
            a ^= f & s
        reg = (a,) + tuple(state)
        out = []
        for i, g in enumerate(self.generators):
            if i == 0 and self.systematic:
                out.append(bit)
            else:
                v = 0
                for gi, r in zip(g, reg):
                    v ^= gi & r
                out.append(v)
        return (a,) + tuple(state[:-1]), tuple(out)

    def to_config(self) -> dict:
        def octal(bits):
            return format(int("".join(map(str, bits)), 2), "o")

        return {
            "name": self.name,
            "memory": self.memory,
            "feedback": octal((1,) + self.feedback) if self.recursive else None,
            "generators": [octal(g) for g in self.generators],
            "systematic": self.systematic,
        }


def rsc_code() -> ConvCodeSpec:
    """The rate-1/2 RSC with feedback 1+D+D^2 and parity a + D^2."""
    return ConvCodeSpec.from_octal(2, ["7", "5"], feedback="7", systematic=True, name="rsc")


def conv75_code() -> ConvCodeSpec:
    """Feed-forward, non-systematic (7,5) octal code."""
    return ConvCodeSpec.from_octal(2, ["7", "5"], name="conv75")


def rsc1513_code() -> ConvCodeSpec:
    """Memory-3 RSC, feedback 13 octal, parity 15 octal (LTE constituent)."""
    return ConvCodeSpec.from_octal(3, ["13", "15"], feedback="13", systematic=True, name="rsc1513")


NAMED_CODES = {"rsc": rsc_code, "conv75": conv75_code, "rsc1513": rsc1513_code}


@dataclass(frozen=True)
class Trellis:
    """Tabulated state machine of a :class:`ConvCodeSpec`.

    ``next_state[s, u]`` and ``outputs[s, u, :]`` (symbols in {-1, +1}) give
    the edge leaving state ``s`` on input ``u``.  ``prev_state[t, j]`` and
    ``prev_input[t, j]`` list the two edges entering state ``t``.
    State integers encode ``(s1..sm)`` with ``s1`` as the most significant bit.
    """

    spec: ConvCodeSpec
    next_state: np.ndarray
    outputs: np.ndarray
    prev_state: np.ndarray
    prev_input: np.ndarray

    @property
    def num_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_streams(self) -> int:
        return self.outputs.shape[2]


def state_to_int(state: tuple[int, ...]) -> int:
    v = 0
    for s in state:
        v = (v << 1) | s
    return v


def int_to_state(v: int, m: int) -> tuple[int, ...]:
    return tuple((v >> (m - 1 - i)) & 1 for i in range(m))


@lru_cache(maxsize=64)
def build_trellis(spec: ConvCodeSpec) -> Trellis:
    S, n = spec.num_states, spec.n_streams
    nxt = np.zeros((S, 2), dtype=np.int64)
    out = np.zeros((S, 2, n), dtype=np.float64)
    incoming: list[list[tuple[int, int]]] = [[] for _ in range(S)]
    for s in range(S):
        st = int_to_state(s, spec.memory)
        for u in (0, 1):
            ns, bits = spec.step(st, u)
            t = state_to_int(ns)
            nxt[s, u] = t
            out[s, u] = 2.0 * np.asarray(bits) - 1.0
            incoming[t].append((s, u))
    if any(len(e) != 2 for e in incoming):
        raise CodeSpecError("trellis states must each have exactly two incoming edges")
    prev_state = np.array([[e[0] for e in inc] for inc in incoming], dtype=np.int64)
    prev_input = np.array([[e[1] for e in inc] for inc in incoming], dtype=np.int64)
    for arr in (nxt, out, prev_state, prev_input):
        arr.setflags(write=False)
    return Trellis(spec, nxt, out, prev_state, prev_input)


def _as_message(msg) -> np.ndarray:
    bits = np.asarray(msg)
    if bits.size == 0:
        raise CodeSpecError("message must be non-empty")
    if not np.all((bits == 0) | (bits == 1)):
        raise CodeSpecError("message entries must be 0 or 1")
    return bits.astype(np.int64)


def encode_conv(spec: ConvCodeSpec, msg) -> np.ndarray:
    """Encode a message (or a batch ``(B, K)``) to symbols ``(..., K, n)``.

    The register starts at zero and is not terminated.
    """
    return encode_with_trellis(build_trellis(spec), msg)


def encode_direct(spec: ConvCodeSpec, msg) -> np.ndarray:
    """Bit-by-bit register simulation of a single message (reference path)."""
    bits = _as_message(msg)
    state = (0,) * spec.memory
    rows = []
    for b in bits:
        state, out = spec.step(state, int(b))
        rows.append(out)
    return 2.0 * np.asarray(rows, dtype=np.float64) - 1.0


def encode_with_trellis(trellis: Trellis, msg) -> np.ndarray:
    bits = _as_message(msg)
    squeeze = bits.ndim == 1
    bits = np.atleast_2d(bits)
    B, K = bits.shape
    out = np.empty((B, K, trellis.n_streams))
    state = np.zeros(B, dtype=np.int64)
    for k in range(K):
        u = bits[:, k]
        out[:, k] = trellis.outputs[state, u]
        state = trellis.next_state[state, u]
    return out[0] if squeeze else out


def symbols_to_bits(symbols) -> np.ndarray:
    return (np.asarray(symbols) > 0).astype(np.int64)


# --- interleaver -----------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def make_interleaver(seed: int, K: int) -> np.ndarray:
    """Seeded permutation of ``range(K)``.

    Fisher-Yates (Durstenfeld, descending ``i``) driven by SplitMix64 seeded
    with ``seed``; index ``j`` in ``[0, i]`` is drawn by rejection sampling so
    the result is reproducible in any language.
    """
    if K < 1:
        raise CodeSpecError("interleaver length must be >= 1")
    perm = list(range(K))
    state = int(seed) & _MASK64
    for i in range(K - 1, 0, -1):
        bound = i + 1
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            state, r = _splitmix64(state)
            if r < limit:
                break
        j = r % bound
        perm[i], perm[j] = perm[j], perm[i]
    return np.asarray(perm, dtype=np.int64)


def invert_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


@dataclass(frozen=True, eq=False)
class TurboCodeSpec:
    """Parallel concatenation of two copies of a systematic rate-1/2 code.

    Encoder 2 sees ``msg[interleaver]``.  Transmitted layout per step is
    ``(systematic, parity 1, parity 2)``.
    """

    component: ConvCodeSpec
    interleaver: np.ndarray = field(repr=False)
    seed: int | None = None

    def __post_init__(self):
        c = self.component
        if not c.systematic or c.n_streams != 2:
            raise CodeSpecError("turbo component must be a systematic rate-1/2 code")
        perm = np.asarray(self.interleaver, dtype=np.int64)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise CodeSpecError("interleaver must be a permutation of range(K)")
        perm.setflags(write=False)
        object.__setattr__(self, "interleaver", perm)

    @classmethod
    def random(cls, K: int, seed: int = 0, component: ConvCodeSpec | None = None):
        return cls(component or rsc_code(), make_interleaver(seed, K), seed)

    @property
    def block_length(self) -> int:
        return self.interleaver.size

    @property
    def n_streams(self) -> int:
        return 3

    @property
    def rate(self) -> float:
        return 1.0 / 3.0

    @property
    def name(self) -> str:
        return f"turbo-{self.component.name}"


def interleave(x, perm, axis=-1):
    return np.take(x, perm, axis=axis)


def deinterleave(x, perm, axis=-1):
    return np.take(x, invert_permutation(perm), axis=axis)


def encode_turbo(spec: TurboCodeSpec, msg) -> np.ndarray:
    bits = _as_message(msg)
    if bits.shape[-1] != spec.block_length:
        raise CodeSpecError(
            f"message length {bits.shape[-1]} does not match interleaver size {spec.block_length}"
        )
    trellis = build_trellis(spec.component)
    c1 = encode_with_trellis(trellis, bits)
    c2 = encode_with_trellis(trellis, interleave(bits, spec.interleaver))
    return np.concatenate([c1, c2[..., 1:2]], axis=-1)


# --- text configs ----------------------------------------------------------

def code_from_config(cfg: dict):
    """Build a conv or turbo spec from a parsed JSON config.

    Keys: ``memory``, ``generators`` (octal strings), ``feedback`` (octal,
    optional), ``systematic``, ``name``; a turbo code additionally sets
    ``"turbo": true``, ``"block_length"`` and ``"interleaver_seed"``.
    """
    try:
        conv = ConvCodeSpec.from_octal(
            int(cfg["memory"]),
            list(cfg["generators"]),
            feedback=cfg.get("feedback"),
            systematic=bool(cfg.get("systematic", False)),
            name=cfg.get("name", "custom"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CodeSpecError(f"bad code config: {exc}") from exc
    if cfg.get("turbo"):
        K = int(cfg.get("block_length", 0))
        return TurboCodeSpec.random(K, int(cfg.get("interleaver_seed", 0)), conv)
    return conv


def resolve_code(name_or_path: str, K: int | None = None, interleaver_seed: int = 0):
    """Look up a code by name (``rsc``, ``conv75``, ``rsc1513``, ``turbo``,
    ``turbo-<component>``) or load it from a JSON config file."""
    if name_or_path in NAMED_CODES:
        return NAMED_CODES[name_or_path]()
    if name_or_path.startswith("turbo"):
        comp = name_or_path.partition("-")[2] or "rsc"
        if comp not in NAMED_CODES:
            raise CodeSpecError(f"unknown turbo component {comp!r}")
        if K is None:
            raise CodeSpecError("turbo code needs a block length")
        return TurboCodeSpec.random(K, interleaver_seed, NAMED_CODES[comp]())
    path = Path(name_or_path)
    if not path.exists():
        raise CodeSpecError(f"unknown code {name_or_path!r}")
    cfg = json.loads(path.read_text())
    if cfg.get("turbo") and K is not None and "block_length" not in cfg:
        cfg["block_length"] = K
    return code_from_config(cfg)
