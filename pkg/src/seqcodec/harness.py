"""Monte-Carlo experiments: BER/BLER sweeps, training data, positional and ablation studies.

Every block draws its message and noise from its own Philox stream keyed by
``(seed, SNR index, block index)``.  Blocks are processed in fixed-size
chunks whose results are reduced in chunk order, so rows are identical for
any number of worker threads.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.special import logit
from scipy.stats import norm

from . import channels as ch
from .codes import ConvCodeSpec, TurboCodeSpec, build_trellis, encode_conv, encode_turbo, interleave
from .decoders import (
    apply_llr_heuristic,
    bcjr_decode,
    turbo_decode_llr,
    viterbi_decode,
)
from .nn.model import ModelSpec, count_parameters, stacked_decoder
from .nn.train import TrainConfig, predict_bits, train
from .nn.turbo import neural_turbo_decode

CHUNK = 250
DECODERS = ("viterbi", "bcjr", "turbo", "turbo-erasure", "turbo-saturation")


class HarnessError(ValueError):
    pass


# --- training-SNR rule ---------------------------------------------------------

def snr_knee(rate: float) -> float:
    """Capacity-derived threshold ``10 log10(2^(2r) - 1)`` in dB."""
    if not 0 < rate <= 1:
        raise HarnessError("rate must lie in (0, 1]")
    return 10.0 * math.log10(2.0 ** (2.0 * rate) - 1.0)


def train_snr_rule(rate: float, snr_test: float) -> float:
    return min(snr_test, snr_knee(rate))


# --- results -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    snr_db: float
    decoder: str
    code: str
    channel: str
    blocks: int
    K: int
    bit_errors: int
    block_errors: int
    ber: float
    bler: float
    ci_halfwidth: float
    seed: int


SWEEP_COLUMNS = [f.name for f in fields(SweepRow)]


def wilson_interval(errors: int, n: float, z: float = norm.ppf(0.975)) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion over ``n`` trials."""
    if n <= 0:
        return 0.0, 1.0
    p = errors / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def ber_interval(per_block_errors, K: int) -> tuple[float, float]:
    """Wilson interval on BER with the bit count deflated by the design effect.

    Decoding errors arrive in bursts inside a block, so bits are not
    independent trials.  The effective sample size divides ``blocks * K`` by
    the ratio of the observed per-block error variance to the binomial
    variance (never below 1).
    """
    e = np.asarray(per_block_errors, dtype=np.float64)
    n = e.size * K
    total = int(e.sum())
    p = total / n if n else 0.0
    deff = 1.0
    if 0 < p < 1 and e.size > 1:
        deff = max(1.0, float(e.var(ddof=1)) / (K * p * (1 - p)))
    return wilson_interval(total / deff, n / deff)


def make_row(snr, decoder, code, channel, per_block_errors, K, seed) -> SweepRow:
    e = np.asarray(per_block_errors)
    blocks = e.size
    bit_errors = int(e.sum())
    lo, hi = ber_interval(e, K)
    return SweepRow(
        snr_db=float(snr), decoder=decoder, code=code, channel=channel, blocks=blocks, K=K,
        bit_errors=bit_errors, block_errors=int((e > 0).sum()),
        ber=bit_errors / (blocks * K), bler=float((e > 0).sum()) / blocks,
        ci_halfwidth=float(hi - lo) / 2.0, seed=int(seed),
    )


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows, columns=None) -> str:
    rows = list(rows)
    if columns is None:
        columns = list(asdict(rows[0])) if rows else SWEEP_COLUMNS
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = asdict(r) if not isinstance(r, dict) else r
        w.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()


# --- block generation ----------------------------------------------------------

def code_name(code) -> str:
    return code.name


def encode_any(code, msgs):
    if isinstance(code, TurboCodeSpec):
        return encode_turbo(code, msgs)
    return encode_conv(code, msgs)


def generate_blocks(code, cfg, K: int, seed: int, key: int, start: int, stop: int, all_zero: bool = False):
    """Messages and received words for blocks ``start..stop`` of stream ``key``."""
    gens = [ch.block_rng(seed, key, b) for b in range(start, stop)]
    if all_zero:
        msgs = np.zeros((stop - start, K), dtype=np.int64)
    else:
        msgs = np.stack([g.integers(0, 2, K) for g in gens])
    words = encode_any(code, msgs)
    received = np.stack([ch.transmit(cfg, w, g) for w, g in zip(words, gens)])
    return msgs, received


def _chunks(blocks: int):
    return [(s, min(s + CHUNK, blocks)) for s in range(0, blocks, CHUNK)]


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def default_threshold(sigma: float) -> float:
    """LLR of a symbol received three noise deviations beyond its nominal +-1."""
    return 2.0 * (1.0 + 3.0 * sigma) / (sigma * sigma)


def classical_decoder(code, name: str, cfg, iterations: int = 6, threshold: float | None = None,
                      metric: str = "gaussian"):
    """Return ``received -> (bits, llr)`` for a named classical decoder."""
    if name not in DECODERS:
        raise HarnessError(f"unknown decoder {name!r}; choose from {', '.join(DECODERS)}")
    turbo = name.startswith("turbo")
    if turbo != isinstance(code, TurboCodeSpec):
        raise HarnessError(f"decoder {name!r} cannot decode code {code.name!r}")
    if name == "viterbi":
        trellis = build_trellis(code)
        return lambda y: (viterbi_decode(trellis, y, cfg.sigma).bits, None)
    if name == "bcjr":
        trellis = build_trellis(code)

        def run(y):
            r = bcjr_decode(trellis, ch.symbol_llr(cfg, y, metric))
            return r.bits, r.llr

        return run
    mode = name.partition("-")[2] or None
    T = threshold if threshold is not None else default_threshold(cfg.sigma)

    def run(y):
        L = apply_llr_heuristic(ch.symbol_llr(cfg, y, metric), mode, T)
        r = turbo_decode_llr(code, L, iterations)
        return r.bits, r.llr

    return run


def _sweep(code, channel, make_decoder, decoder_id, snrs, blocks, K, seed, workers):
    if blocks < 1:
        raise HarnessError("blocks must be >= 1")
    if isinstance(code, TurboCodeSpec) and code.block_length != K:
        raise HarnessError("turbo interleaver length does not match K")
    rows = []
    for i, snr in enumerate(snrs):
        cfg = ch.with_snr(channel, snr)
        decode = make_decoder(cfg)

        def work(span, cfg=cfg, decode=decode, i=i):
            msgs, y = generate_blocks(code, cfg, K, seed, i, *span)
            bits, _ = decode(y)
            return (bits != msgs).sum(axis=1)

        errs = np.concatenate(_map(work, _chunks(blocks), workers))
        rows.append(make_row(snr, decoder_id, code_name(code), ch.channel_id(channel), errs, K, seed))
    return rows


def run_sweep(code, channel, decoder: str, snrs, blocks: int, K: int, seed: int, iterations: int = 6,
              threshold: float | None = None, metric: str = "gaussian", workers: int = 1) -> list[SweepRow]:
    """BER/BLER of a classical decoder at each SNR in ``snrs``.

    ``channel`` is a channel config whose ``sigma`` is replaced per SNR.
    ``metric="exact"`` feeds the decoder the channel's true likelihood.
    """
    classical_decoder(code, decoder, ch.with_snr(channel, 0.0))  # validate the pairing up front
    decoder_id = decoder if metric == "gaussian" else f"{decoder}[{metric}]"
    return _sweep(
        code, channel,
        lambda cfg: classical_decoder(code, decoder, cfg, iterations, threshold, metric),
        decoder_id, snrs, blocks, K, seed, workers,
    )


def neural_decoder(spec: ModelSpec, params, code):
    """Return ``received -> (bits, llr)`` for a trained N-RSC style model."""
    n = code.n_streams
    if spec.input_width != n:
        raise HarnessError(f"model reads {spec.input_width} features but the code emits {n} streams")

    def run(y):
        bits, p = predict_bits(spec, params, y)
        return bits, logit(np.clip(p, 1e-15, 1 - 1e-15))

    return run


def evaluate_neural(spec: ModelSpec, params, code, channel, snrs, blocks: int, K: int, seed: int,
                    workers: int = 1, name: str = "neural") -> list[SweepRow]:
    """Sweep identical to :func:`run_sweep` with a trained network as decoder."""
    if isinstance(code, TurboCodeSpec):
        raise HarnessError("use a conv code with a single-stage neural decoder")
    run = neural_decoder(spec, params, code)
    return _sweep(code, channel, lambda cfg: run, name, snrs, blocks, K, seed, workers)


def evaluate_neural_turbo(layers, code: TurboCodeSpec, channel, snrs, blocks: int, K: int, seed: int,
                          workers: int = 1, name: str = "n-turbo", prior_clip: float = 20.0) -> list[SweepRow]:
    """Sweep with a stack of prior-aware layers ``[(spec, params), ...]`` as turbo decoder."""
    if not isinstance(code, TurboCodeSpec):
        raise HarnessError("a neural turbo stack needs a turbo code")
    for spec, _ in layers:
        if spec.input_width != 3:
            raise HarnessError("neural turbo layers read (systematic, parity, prior): width 3")

    def make(cfg):
        return lambda y: neural_turbo_decode(code, layers, y, cfg.sigma, prior_clip)

    return _sweep(code, channel, make, name, snrs, blocks, K, seed, workers)


# --- datasets ------------------------------------------------------------------

@dataclass
class Dataset:
    """Network inputs ``(N, K, F)``, targets ``(N, K)`` and the true bits."""

    inputs: np.ndarray
    targets: np.ndarray
    bits: np.ndarray
    target_kind: str

    def __len__(self):
        return self.inputs.shape[0]

    def to_csv(self) -> str:
        N, K, F = self.inputs.shape
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["example", "position"] + [f"x{j}" for j in range(F)] + ["target", "bit"])
        for i in range(N):
            for k in range(K):
                w.writerow([i, k] + [repr(float(v)) for v in self.inputs[i, k]]
                           + [repr(float(self.targets[i, k])), int(self.bits[i, k])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, target_kind: str = "unknown") -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[:2] != ["example", "position"] or header[-2:] != ["target", "bit"]:
            raise HarnessError("not a dataset CSV")
        if not body:
            raise HarnessError("empty dataset")
        F = len(header) - 4
        arr = np.array(body, dtype=np.float64)
        N = int(arr[:, 0].max()) + 1
        K = int(arr[:, 1].max()) + 1
        if arr.shape[0] != N * K:
            raise HarnessError("dataset CSV is not rectangular")
        arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]
        inputs = arr[:, 2 : 2 + F].reshape(N, K, F)
        return cls(inputs, arr[:, 2 + F].reshape(N, K), arr[:, 3 + F].reshape(N, K).astype(np.int64), target_kind)


def gen_dataset_conv(code: ConvCodeSpec, K: int, snr: float, N: int, target: str = "posterior",
                     seed: int = 0, channel=None) -> Dataset:
    """Noisy codewords ``(N, K, n)`` with bit labels or exact BCJR posteriors."""
    if N < 1:
        raise HarnessError("N must be >= 1")
    if target not in ("bits", "posterior"):
        raise HarnessError("target must be 'bits' or 'posterior'")
    cfg = ch.with_snr(channel if channel is not None else ch.AWGN(), snr)
    msgs, y = generate_blocks(code, cfg, K, seed, 0, 0, N)
    if target == "bits":
        targets = msgs.astype(np.float64)
    else:
        targets = bcjr_decode(build_trellis(code), ch.channel_llr(y, cfg.sigma)).posterior
    return Dataset(y, targets, msgs, target)


def gen_dataset_bcjr_prior(turbo: TurboCodeSpec, K: int, snr: float = -1.0, N: int = 1200, seed: int = 0,
                           iterations: int = 6) -> Dataset:
    """(received pair, prior LLR) -> posterior triplets from turbo decoding.

    ``ceil(N / (2 * iterations))`` turbo blocks are decoded and every
    component decoding contributes one example in that component's bit
    order: features are ``(systematic, parity, prior LLR)``.  ``bits`` holds
    the true message in the same order.
    """
    if N < 1:
        raise HarnessError("N must be >= 1")
    if turbo.block_length != K:
        raise HarnessError("turbo interleaver length does not match K")
    per_block = 2 * iterations
    n_blocks = -(-N // per_block)
    cfg = ch.with_snr(ch.AWGN(), snr)
    msgs, y = generate_blocks(turbo, cfg, K, seed, 0, 0, n_blocks)
    res = turbo_decode_llr(turbo, ch.channel_llr(y, cfg.sigma), iterations, capture=True)
    perm = turbo.interleaver
    rx = [y[..., :2], np.stack([interleave(y[..., 0], perm), y[..., 2]], axis=-1)]
    truth = [msgs, interleave(msgs, perm)]
    inputs = np.empty((n_blocks, per_block, K, 3))
    targets = np.empty((n_blocks, per_block, K))
    bits = np.empty((n_blocks, per_block, K), dtype=np.int64)
    for s, (_, prior, post) in enumerate(res.steps):
        inputs[:, s, :, :2] = rx[s % 2]
        inputs[:, s, :, 2] = prior
        targets[:, s] = post
        bits[:, s] = truth[s % 2]
    return Dataset(inputs.reshape(-1, K, 3)[:N], targets.reshape(-1, K)[:N], bits.reshape(-1, K)[:N], "posterior")


# --- positional analysis ---------------------------------------------------------

@dataclass(frozen=True)
class PositionRow:
    position: int
    ber: float
    mean_llr: float
    llr_stderr: float
    baseline_llr: float
    perturbation: float


def positional_analysis(decode_factory, code, channel: ch.FixedBurst, snr: float, blocks: int, K: int,
                        seed: int, workers: int = 1) -> list[PositionRow]:
    """Per-position BER and mean output LLR with the all-zero codeword.

    ``decode_factory(cfg)`` returns ``received -> (bits, llr)``.  The same
    noise is replayed with the burst removed; ``perturbation`` is the
    difference of mean LLRs with and without the burst.
    """
    if not isinstance(channel, ch.FixedBurst):
        raise HarnessError("positional analysis needs a fixed-burst channel")
    if channel.position >= K:
        raise HarnessError("burst position outside the block")
    cfg = ch.with_snr(channel, snr)
    base = replace(cfg, amplitude=0.0)

    def stats(c):
        decode = decode_factory(c)

        def work(span):
            _, y = generate_blocks(code, c, K, seed, 0, *span, all_zero=True)
            bits, llr = decode(y)
            return bits, llr

        parts = _map(work, _chunks(blocks), workers)
        bits = np.concatenate([p[0] for p in parts])
        llr = np.concatenate([p[1] for p in parts])
        return bits, llr

    bits, llr = stats(cfg)
    _, llr0 = stats(base)
    se = llr.std(axis=0, ddof=1) / np.sqrt(blocks) if blocks > 1 else np.zeros(K)
    mean, mean0 = llr.mean(axis=0), llr0.mean(axis=0)
    return [
        PositionRow(k, float(bits[:, k].mean()), float(mean[k]), float(se[k]), float(mean0[k]),
                    float(mean[k] - mean0[k]))
        for k in range(K)
    ]


def peak_position(rows) -> int:
    return max(rows, key=lambda r: abs(r.perturbation)).position


# --- ablation --------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    architecture: str
    parameters: int
    final_loss: float
    ber: float
    test_snr_db: float
    seed: int


def parse_architecture(name: str, hidden: int, input_width: int = 2, batchnorm: bool = True) -> ModelSpec:
    """``bi-gru-2``, ``uni-lstm-1``, ``bi-rnn-3`` ... -> :class:`ModelSpec`."""
    try:
        direction, cell, depth = name.lower().split("-")
        depth = int(depth)
    except ValueError as exc:
        raise HarnessError(f"bad architecture name {name!r}") from exc
    if direction not in ("bi", "uni") or not 1 <= depth <= 5:
        raise HarnessError(f"bad architecture name {name!r}")
    return stacked_decoder(hidden, depth, cell, direction == "bi", batchnorm, input_width)


def ablation_grid(architectures, code: ConvCodeSpec, train_set: Dataset, cfg: TrainConfig, test_snr: float,
                  test_blocks: int, test_K: int, seed: int = 0, hidden: int = 64, workers: int = 1,
                  callback=None, channel=None) -> list[AblationRow]:
    """Train every architecture on the same data and seed, then test on shared blocks."""
    rows = []
    for name in architectures:
        spec = parse_architecture(name, hidden, code.n_streams)
        params, hist = train(spec, train_set.inputs, train_set.targets, cfg, seed)
        res = evaluate_neural(spec, params, code, channel if channel is not None else ch.AWGN(), [test_snr], test_blocks, test_K,
                              seed + 1, workers, name)[0]
        rows.append(AblationRow(name, int(count_parameters(spec)), float(hist[-1]) if hist else float("nan"),
                                res.ber, float(test_snr), seed))
        if callback is not None:
            callback(rows[-1])
    return rows

