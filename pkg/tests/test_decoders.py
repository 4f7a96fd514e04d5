import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqcodec.channels import block_rng, channel_llr, snr_to_sigma
from seqcodec.codes import TurboCodeSpec, build_trellis, conv75_code, encode_conv, encode_turbo, rsc1513_code, rsc_code
from seqcodec.decoders import (
    DecodeError,
    apply_llr_heuristic,
    bcjr_decode,
    exhaustive_map_bit,
    exhaustive_ml_block,
    turbo_decode,
    turbo_decode_llr,
    viterbi_decode,
)

CODES = [rsc_code(), conv75_code(), rsc1513_code()]


def _noisy(spec, K, snr, seed):
    rng = np.random.default_rng(seed)
    msg = rng.integers(0, 2, K)
    s = snr_to_sigma(snr)
    return msg, encode_conv(spec, msg) + s * rng.standard_normal((K, spec.n_streams)), s


@pytest.mark.parametrize("spec", CODES, ids=lambda s: s.name)
def test_noiseless_decoding_recovers_message(spec):
    rng = np.random.default_rng(0)
    msgs = rng.integers(0, 2, (4, 30))
    x = encode_conv(spec, msgs)
    t = build_trellis(spec)
    np.testing.assert_array_equal(viterbi_decode(t, x).bits, msgs)
    np.testing.assert_array_equal(bcjr_decode(t, channel_llr(x, 0.3)).bits, msgs)


@pytest.mark.parametrize("spec", CODES, ids=lambda s: s.name)
def test_bcjr_matches_enumeration(spec):
    t = build_trellis(spec)
    for seed in range(10):
        _, y, s = _noisy(spec, 7, 0.0, seed)
        got = bcjr_decode(t, channel_llr(y, s)).posterior
        np.testing.assert_allclose(got, exhaustive_map_bit(spec, y, s), atol=1e-10)


def test_bcjr_with_prior_matches_enumeration():
    spec = rsc_code()
    t = build_trellis(spec)
    rng = np.random.default_rng(4)
    for seed in range(5):
        _, y, s = _noisy(spec, 6, -1.0, seed)
        prior = 2.0 * rng.standard_normal(6)
        got = bcjr_decode(t, channel_llr(y, s), prior).posterior
        np.testing.assert_allclose(got, exhaustive_map_bit(spec, y, s, prior), atol=1e-10)


def test_bcjr_llr_decomposes_into_prior_channel_extrinsic():
    spec = rsc_code()
    _, y, s = _noisy(spec, 20, 1.0, 2)
    L = channel_llr(y, s)
    prior = np.linspace(-1, 1, 20)
    r = bcjr_decode(build_trellis(spec), L, prior)
    np.testing.assert_allclose(r.llr, prior + L[:, 0] + r.extrinsic, atol=1e-12)
    np.testing.assert_allclose(np.exp(r.log_p1) + np.exp(r.log_p0), 1.0, atol=1e-12)


def test_bcjr_batch_matches_single():
    spec = rsc1513_code()
    t = build_trellis(spec)
    ys = np.stack([_noisy(spec, 12, 0.0, s)[1] for s in range(3)])
    batch = bcjr_decode(t, channel_llr(ys, 1.0)).llr
    for i in range(3):
        np.testing.assert_allclose(bcjr_decode(t, channel_llr(ys[i], 1.0)).llr, batch[i], atol=1e-12)


@pytest.mark.parametrize("spec", CODES, ids=lambda s: s.name)
def test_viterbi_matches_exhaustive_ml(spec):
    t = build_trellis(spec)
    for seed in range(10):
        _, y, _ = _noisy(spec, 8, 0.0, seed)
        np.testing.assert_array_equal(viterbi_decode(t, y).bits, exhaustive_ml_block(spec, y))


@settings(max_examples=60, deadline=None)
@given(
    code=st.sampled_from(CODES),
    y=st.lists(st.sampled_from([-1.0, 0.0, 1.0]), min_size=2, max_size=16),
)
def test_viterbi_tie_break_is_lexicographic(code, y):
    # coarse symbol values produce many equal path metrics
    n = code.n_streams
    K = len(y) // n
    if K == 0:
        return
    y = np.asarray(y[: K * n]).reshape(K, n)
    np.testing.assert_array_equal(viterbi_decode(build_trellis(code), y).bits, exhaustive_ml_block(code, y))


def test_viterbi_all_zero_input_picks_zero_message():
    bits = viterbi_decode(build_trellis(rsc_code()), np.zeros((9, 2))).bits
    np.testing.assert_array_equal(bits, np.zeros(9))


def test_decoder_input_validation():
    t = build_trellis(rsc_code())
    with pytest.raises(DecodeError):
        bcjr_decode(t, np.zeros((5, 3)))
    with pytest.raises(DecodeError):
        bcjr_decode(t, np.full((5, 2), np.inf))
    with pytest.raises(DecodeError):
        viterbi_decode(t, np.zeros(5))
    with pytest.raises(DecodeError):
        exhaustive_map_bit(rsc_code(), np.zeros((20, 2)), 1.0)


def test_llr_heuristics():
    L = np.array([-30.0, -2.0, 0.5, 12.0])
    np.testing.assert_array_equal(apply_llr_heuristic(L, "erasure", 10.0), [0.0, -2.0, 0.5, 0.0])
    np.testing.assert_array_equal(apply_llr_heuristic(L, "saturation", 10.0), [-10.0, -2.0, 0.5, 10.0])
    np.testing.assert_array_equal(apply_llr_heuristic(L, None, None), L)
    with pytest.raises(DecodeError):
        apply_llr_heuristic(L, "erasure", None)
    with pytest.raises(DecodeError):
        apply_llr_heuristic(L, "clip", 1.0)


def _turbo_block(K=40, snr=0.0, seed=0, batch=None):
    spec = TurboCodeSpec.random(K, seed=11)
    rng = block_rng(seed, 0)
    shape = (K,) if batch is None else (batch, K)
    msg = rng.integers(0, 2, shape)
    s = snr_to_sigma(snr)
    y = encode_turbo(spec, msg) + s * rng.standard_normal(shape + (3,))
    return spec, msg, y, s


def test_turbo_trace_and_capture():
    spec, msg, y, s = _turbo_block()
    r = turbo_decode_llr(spec, channel_llr(y, s), iterations=3, capture=True)
    assert len(r.trace) == 6 and len(r.steps) == 6
    np.testing.assert_array_equal(r.trace[-1], r.llr)
    np.testing.assert_array_equal(r.steps[0][1], np.zeros(40))
    t = build_trellis(spec.component)
    for comp_llrs, prior, post in r.steps:
        np.testing.assert_allclose(bcjr_decode(t, comp_llrs, prior).posterior, post, atol=1e-12)


def test_turbo_single_pass_equals_component_bcjr():
    spec, msg, y, s = _turbo_block()
    L = channel_llr(y, s)
    r = turbo_decode_llr(spec, L, iterations=1)
    first = bcjr_decode(build_trellis(spec.component), L[:, :2])
    np.testing.assert_allclose(r.trace[0], first.llr, atol=1e-12)


def test_turbo_iterations_help_on_average():
    spec, msg, y, s = _turbo_block(K=40, snr=0.0, seed=1, batch=300)
    one = turbo_decode(spec, y, s, iterations=1).bits
    six = turbo_decode(spec, y, s, iterations=6).bits
    assert (six != msg).mean() < (one != msg).mean()


def test_turbo_noiseless_and_errors():
    spec, msg, _, _ = _turbo_block()
    x = encode_turbo(spec, msg)
    np.testing.assert_array_equal(turbo_decode(spec, x, 0.5).bits, msg)
    with pytest.raises(DecodeError):
        turbo_decode(spec, x, 0.5, iterations=0)
    with pytest.raises(DecodeError):
        turbo_decode(spec, x[:30], 0.5)
