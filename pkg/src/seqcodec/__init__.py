"""Convolutional and turbo codes with classical and recurrent-network decoders."""
from .channels import AWGN, Bursty, FixedBurst, StudentT, channel_llr, snr_to_sigma, transmit
from .codes import (
    ConvCodeSpec,
    TurboCodeSpec,
    build_trellis,
    conv75_code,
    encode_conv,
    encode_turbo,
    make_interleaver,
    resolve_code,
    rsc1513_code,
    rsc_code,
)
from .decoders import bcjr_decode, turbo_decode, turbo_decode_llr, viterbi_decode
from .harness import evaluate_neural, gen_dataset_conv, run_sweep, train_snr_rule

__version__ = "0.1.0"
