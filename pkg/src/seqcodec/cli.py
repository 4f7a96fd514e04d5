"""Command-line entry point: ``seqcodec <command> [options]``.

Every command takes ``--seed``, ``--out``, ``--code`` and ``--channel`` and
writes one CSV (stdout when ``--out`` is omitted).  Configuration errors
print a message to stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import channels as ch
from . import harness as hx
from .codes import TurboCodeSpec, encode_conv, encode_turbo, resolve_code
from .nn.model import count_parameters
from .nn.train import TrainConfig, load_model, save_model, train

CHANNELS = ("awgn", "t", "bursty", "fixed-burst")


def _add_common(p: argparse.ArgumentParser, K_default: int = 100):
    p.add_argument("--seed", type=int, required=True, help="master seed (required)")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--code", default="rsc", help="rsc | conv75 | rsc1513 | turbo[-<component>] | JSON config file")
    p.add_argument("--interleaver-seed", type=int, default=0, help="interleaver seed for named turbo codes")
    p.add_argument("-K", "--block-length", dest="K", type=int, default=K_default)
    p.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on this)")
    g = p.add_argument_group("channel")
    g.add_argument("--channel", choices=CHANNELS, default="awgn")
    g.add_argument("--nu", type=float, default=3.0, help="t: degrees of freedom")
    g.add_argument("--sigma-b", type=float, default=5.0, help="bursty: burst noise std")
    g.add_argument("--rho", type=float, default=0.05, help="bursty: burst probability per symbol")
    g.add_argument("--amplitude", type=float, default=5.0, help="fixed-burst: added amplitude")
    g.add_argument("--position", type=int, default=50, help="fixed-burst: 0-based step index")


def _add_train_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("training")
    g.add_argument("--learning-rate", type=float, default=1e-3)
    g.add_argument("--batch-size", type=int, default=200)
    g.add_argument("--epochs", type=int, default=10)
    g.add_argument("--clip-norm", type=float, default=1.0)
    g.add_argument("--loss", choices=("mse_posterior", "mse_bits", "bce"), default="mse_posterior")
    g.add_argument("--hidden", type=int, default=64, help="units per direction")


def _add_train_data(p: argparse.ArgumentParser):
    p.add_argument("--train-N", type=int, default=10000, help="training examples")
    p.add_argument("--train-K", type=int, default=32, help="training block length")
    p.add_argument("--train-snr", type=float, default=None,
                   help="training SNR in dB (default: min(0, knee of the code rate))")
    p.add_argument("--target", choices=("posterior", "bits"), default="posterior")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqcodec", description="Convolutional and turbo codes, "
                                     "classical and recurrent-network decoders, Monte-Carlo sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode ASCII 0/1 message lines into symbols")
    _add_common(p)
    p.add_argument("--input", help="file with one message per line (default: stdin)")
    p.add_argument("--snr", type=float, default=None, help="pass the symbols through the channel at this SNR")

    p = sub.add_parser("simulate", help="BER/BLER sweep of a classical decoder")
    _add_common(p)
    p.add_argument("--decoder", choices=hx.DECODERS, default="bcjr")
    p.add_argument("--snr", type=float, nargs="+", required=True)
    p.add_argument("--blocks", type=int, default=1000)
    p.add_argument("--iterations", type=int, default=6)
    p.add_argument("--threshold", type=float, default=None, help="turbo heuristics: LLR threshold")
    p.add_argument("--metric", choices=("gaussian", "exact"), default="gaussian")

    p = sub.add_parser("gen-data", help="training set CSV")
    _add_common(p)
    p.add_argument("--kind", choices=("conv", "turbo-prior"), default="conv")
    p.add_argument("--snr", type=float, default=0.0)
    p.add_argument("-N", "--examples", dest="N", type=int, default=1000)
    p.add_argument("--target", choices=("posterior", "bits"), default="posterior")
    p.add_argument("--iterations", type=int, default=6)

    p = sub.add_parser("train", help="train a recurrent decoder; CSV holds the loss per epoch")
    _add_common(p)
    _add_train_flags(p)
    _add_train_data(p)
    p.add_argument("--data", help="dataset CSV from gen-data (default: generate one)")
    p.add_argument("--arch", default="bi-gru-2", help="<bi|uni>-<gru|lstm|rnn>-<depth>")
    p.add_argument("--no-batchnorm", action="store_true")
    p.add_argument("--checkpoint", required=True, help="where to write the trained model")

    p = sub.add_parser("evaluate", help="BER/BLER sweep of a trained checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--snr", type=float, nargs="+", required=True)
    p.add_argument("--blocks", type=int, default=1000)
    p.add_argument("--layers", type=int, default=2, help="turbo codes: stacked copies of the checkpoint")

    p = sub.add_parser("analyze-positional", help="per-position BER and mean LLR under a fixed burst")
    _add_common(p)
    p.add_argument("--decoder", choices=hx.DECODERS, default="bcjr")
    p.add_argument("--checkpoint", help="use a trained network instead of --decoder")
    p.add_argument("--snr", type=float, default=4.0)
    p.add_argument("--blocks", type=int, default=1000)
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--threshold", type=float, default=None)

    p = sub.add_parser("ablate", help="train and test several architectures on shared data")
    _add_common(p)
    _add_train_flags(p)
    _add_train_data(p)
    p.add_argument("--arch", nargs="+", default=["bi-gru-2", "bi-gru-1", "uni-gru-2"])
    p.add_argument("--test-snr", type=float, default=0.0)
    p.add_argument("--blocks", type=int, default=2000, help="test blocks")
    return parser


def _channel(args):
    if args.channel == "t":
        cfg = ch.StudentT(nu=args.nu)
    elif args.channel == "bursty":
        cfg = ch.Bursty(sigma_b=args.sigma_b, rho=args.rho)
    elif args.channel == "fixed-burst":
        cfg = ch.FixedBurst(amplitude=args.amplitude, position=args.position)
    else:
        cfg = ch.AWGN()
    cfg._check()
    return cfg


def _code(args):
    if args.K < 1:
        raise hx.HarnessError("block length must be >= 1")
    return resolve_code(args.code, args.K, args.interleaver_seed)


def _write(args, text: str):
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(args.learning_rate, args.batch_size, args.epochs, args.clip_norm, args.loss)


def _train_set(args, code):
    if isinstance(code, TurboCodeSpec):
        raise hx.HarnessError("generate turbo training data with gen-data --kind turbo-prior and pass --data")
    snr = args.train_snr if args.train_snr is not None else hx.train_snr_rule(code.rate, 0.0)
    return hx.gen_dataset_conv(code, args.train_K, snr, args.train_N, args.target, args.seed, _channel(args))


def cmd_encode(args):
    code = _code(args)
    text = Path(args.input).read_text() if args.input else sys.stdin.read()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise hx.HarnessError("no messages to encode")
    if any(set(ln) - {"0", "1"} for ln in lines):
        raise hx.HarnessError("messages must contain only the characters 0 and 1")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["message", "position"] + [f"c{j}" for j in range(code.n_streams)])
    cfg = ch.with_snr(_channel(args), args.snr) if args.snr is not None else None
    for i, ln in enumerate(lines):
        msg = np.array([int(c) for c in ln], dtype=np.int64)
        if isinstance(code, TurboCodeSpec):
            x = encode_turbo(code, msg)
        else:
            x = encode_conv(code, msg)
        if cfg is not None:
            x = ch.transmit(cfg, x, ch.block_rng(args.seed, 0, i))
        for k, row in enumerate(x):
            w.writerow([i, k] + [repr(float(v)) for v in row])
    _write(args, buf.getvalue())


def cmd_simulate(args):
    rows = hx.run_sweep(_code(args), _channel(args), args.decoder, args.snr, args.blocks, args.K, args.seed,
                        args.iterations, args.threshold, args.metric, args.workers)
    _write(args, hx.rows_to_csv(rows, hx.SWEEP_COLUMNS))


def cmd_gen_data(args):
    code = _code(args)
    if args.kind == "turbo-prior":
        if not isinstance(code, TurboCodeSpec):
            raise hx.HarnessError("--kind turbo-prior needs a turbo code")
        ds = hx.gen_dataset_bcjr_prior(code, args.K, args.snr, args.N, args.seed, args.iterations)
    else:
        if isinstance(code, TurboCodeSpec):
            raise hx.HarnessError("--kind conv needs a convolutional code")
        ds = hx.gen_dataset_conv(code, args.K, args.snr, args.N, args.target, args.seed, _channel(args))
    _write(args, ds.to_csv())


def cmd_train(args):
    code = _code(args)
    if args.data:
        ds = hx.Dataset.from_csv(Path(args.data).read_text())
    else:
        ds = _train_set(args, code)
    width = ds.inputs.shape[2]
    spec = hx.parse_architecture(args.arch, args.hidden, width, not args.no_batchnorm)
    params, history = train(spec, ds.inputs, ds.targets, _train_cfg(args), args.seed)
    save_model(args.checkpoint, spec, params, {"arch": args.arch, "code": code.name, "seed": args.seed})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "parameters"])
    for e, v in enumerate(history):
        w.writerow([e + 1, repr(float(v)), count_parameters(spec)])
    _write(args, buf.getvalue())


def cmd_evaluate(args):
    code = _code(args)
    spec, params, _ = load_model(args.checkpoint)
    if isinstance(code, TurboCodeSpec):
        if args.layers < 1:
            raise hx.HarnessError("--layers must be >= 1")
        layers = [(spec, params)] * args.layers
        rows = hx.evaluate_neural_turbo(layers, code, _channel(args), args.snr, args.blocks, args.K, args.seed,
                                        args.workers)
    else:
        rows = hx.evaluate_neural(spec, params, code, _channel(args), args.snr, args.blocks, args.K, args.seed,
                                  args.workers)
    _write(args, hx.rows_to_csv(rows, hx.SWEEP_COLUMNS))


def cmd_analyze_positional(args):
    code = _code(args)
    channel = _channel(args)
    if args.checkpoint:
        spec, params, _ = load_model(args.checkpoint)
        run = hx.neural_decoder(spec, params, code)
        factory = lambda cfg: run  # noqa: E731
    else:
        hx.classical_decoder(code, args.decoder, ch.with_snr(channel, args.snr))
        factory = lambda cfg: hx.classical_decoder(code, args.decoder, cfg, args.iterations,  # noqa: E731
                                                   args.threshold)
    rows = hx.positional_analysis(factory, code, channel, args.snr, args.blocks, args.K, args.seed, args.workers)
    _write(args, hx.rows_to_csv(rows))


def cmd_ablate(args):
    code = _code(args)
    if isinstance(code, TurboCodeSpec):
        raise hx.HarnessError("ablation runs on convolutional codes")
    for a in args.arch:
        hx.parse_architecture(a, args.hidden, code.n_streams)
    ds = _train_set(args, code)
    rows = hx.ablation_grid(args.arch, code, ds, _train_cfg(args), args.test_snr, args.blocks, args.K,
                            args.seed, args.hidden, args.workers, channel=_channel(args))
    _write(args, hx.rows_to_csv(rows))


COMMANDS = {
    "encode": cmd_encode,
    "simulate": cmd_simulate,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "analyze-positional": cmd_analyze_positional,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
