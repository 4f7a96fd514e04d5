import numpy as np
import pytest

from seqcodec.channels import snr_to_sigma
from seqcodec.codes import TurboCodeSpec, encode_turbo
from seqcodec.harness import gen_dataset_bcjr_prior
from seqcodec.nn.gradcheck import max_relative_error, numerical_gradient
from seqcodec.nn.model import init_params, is_trainable, loss, stacked_decoder, trainable_names
from seqcodec.nn.train import TrainConfig
from seqcodec.nn.turbo import (
    finetune,
    neural_turbo_backward,
    neural_turbo_decode,
    neural_turbo_forward,
    pretrain_layers,
)

K = 6


def _setup(n_layers, seed=0):
    spec = TurboCodeSpec.random(K, seed=2)
    mspec = stacked_decoder(3, 1, input_width=3)
    rng = np.random.default_rng(seed)
    layers = []
    for j in range(n_layers):
        p = init_params(mspec, seed + j)
        p = {k: v + 0.2 * rng.standard_normal(v.shape) if is_trainable(k) else v for k, v in p.items()}
        layers.append((mspec, p))
    msg = rng.integers(0, 2, (2, K))
    sigma = snr_to_sigma(0.0)
    y = encode_turbo(spec, msg) + sigma * rng.standard_normal((2, K, 3))
    return spec, layers, y, msg, sigma


@pytest.mark.parametrize("n_layers", [1, 2, 3])
def test_stack_gradient_matches_finite_differences(n_layers):
    spec, layers, y, msg, sigma = _setup(n_layers)
    final, cache = neural_turbo_forward(spec, layers, y, sigma, prior_clip=1e6, train=True)
    _, dfinal = loss(final, msg, "bce")
    grads = neural_turbo_backward(spec, layers, cache, dfinal)

    hp = [(m, {k: v.astype(np.longdouble) for k, v in p.items()}) for m, p in layers]

    def value():
        f, _ = neural_turbo_forward(spec, hp, y, sigma, prior_clip=1e6, train=True)
        return loss(f, msg.astype(np.longdouble), "bce")[0]

    for j, (m, p) in enumerate(hp):
        numeric = {k: numerical_gradient(value, p[k]).astype(np.float64) for k in trainable_names(m)}
        assert max_relative_error(grads[j], numeric) <= 1e-6


def test_saturated_priors_cut_the_gradient():
    # when every exchanged prior hits the clip, layer 1 no longer depends on layer 0
    spec, layers, y, msg, sigma = _setup(2)
    final, cache = neural_turbo_forward(spec, layers, y, sigma, prior_clip=1e-9, train=True)
    assert not cache[0]["mask"].any()
    _, dfinal = loss(final, msg, "bce")
    grads = neural_turbo_backward(spec, layers, cache, dfinal)
    assert all(np.all(g == 0) for g in grads[0].values())
    assert any(np.any(g != 0) for g in grads[1].values())


def test_output_order_is_natural():
    # a single layer acts on component 1 in natural order, two layers end on component 2
    spec, layers, y, msg, sigma = _setup(2)
    f1, c1 = neural_turbo_forward(spec, layers[:1], y, sigma)
    np.testing.assert_array_equal(f1, c1[0]["out"])
    f2, c2 = neural_turbo_forward(spec, layers, y, sigma)
    np.testing.assert_array_equal(f2[..., spec.interleaver], c2[1]["out"])


def test_pretrain_and_finetune_run_and_decode():
    spec = TurboCodeSpec.random(12, seed=1)
    ds = gen_dataset_bcjr_prior(spec, 12, snr=-1.0, N=120, seed=0, iterations=2)
    mspec = stacked_decoder(4, 1, input_width=3)
    layers, hist = pretrain_layers(mspec, ds.inputs, ds.targets, 2, TrainConfig(batch_size=20, epochs=2), seed=0)
    assert len(layers) == 2 and len(hist) == 2
    assert all(np.array_equal(layers[0][1][k], layers[1][1][k]) for k in layers[0][1])
    rng = np.random.default_rng(0)
    msg = rng.integers(0, 2, (30, 12))
    sigma = snr_to_sigma(0.0)
    y = encode_turbo(spec, msg) + sigma * rng.standard_normal((30, 12, 3))
    tuned, fh = finetune(spec, layers, y, msg, sigma, TrainConfig(batch_size=10, epochs=2, loss="bce"), seed=0)
    assert len(fh) == 2 and np.all(np.isfinite(fh))
    assert not np.array_equal(tuned[0][1]["0.fwd.W"], layers[0][1]["0.fwd.W"])
    bits, p = neural_turbo_decode(spec, tuned, y, sigma)
    assert bits.shape == (30, 12) and np.all((p >= 0) & (p <= 1))
    b1, p1 = neural_turbo_decode(spec, tuned, y[0], sigma)
    np.testing.assert_array_equal(b1, bits[0])
