"""scikit-learn style wrappers around the encoders and decoders.

Decoders take received words ``X`` shaped ``(n_blocks, K, n_streams)`` and
predict message bits ``(n_blocks, K)``.  Classical decoders have nothing to
learn, so ``fit`` only validates input shape; :class:`RecurrentDecoder`
trains a network.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import channels as ch
from .codes import ConvCodeSpec, TurboCodeSpec, build_trellis, encode_conv, encode_turbo
from .decoders import apply_llr_heuristic, bcjr_decode, turbo_decode_llr, viterbi_decode
from .nn.model import stacked_decoder
from .nn.train import TrainConfig, load_model, predict_proba, save_model, train


def check_received(X, n_streams: int | None = None) -> np.ndarray:
    """Validate received words: finite float array ``(n_blocks, K, n_streams)``.

    A single block ``(K, n_streams)`` is promoted to a batch of one.
    """
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected received words shaped (n_blocks, K, n_streams), got {X.shape}")
    if n_streams is not None and X.shape[2] != n_streams:
        raise ValueError(f"expected {n_streams} symbols per step, got {X.shape[2]}")
    return X


def check_bits(y) -> np.ndarray:
    y = check_array(y, ensure_2d=False, dtype=None)
    y = np.atleast_2d(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("message bits must be 0 or 1")
    return y.astype(np.int64)


def check_targets(y, shape) -> np.ndarray:
    y = check_array(y, ensure_2d=False, dtype=np.float64)
    y = np.atleast_2d(y)
    if y.shape != tuple(shape):
        raise ValueError(f"targets must have shape {tuple(shape)}, got {y.shape}")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("targets must lie in [0, 1]")
    return y


class ConvEncoder(TransformerMixin, BaseEstimator):
    """Map message bits ``(n_blocks, K)`` to symbols ``(n_blocks, K, n)``."""

    def __init__(self, code=None):
        self.code = code

    def fit(self, X=None, y=None):
        self.code_ = self.code if self.code is not None else ConvCodeSpec.from_octal(
            2, ["7", "5"], feedback="7", systematic=True, name="rsc")
        return self

    def transform(self, X):
        check_is_fitted(self, "code_")
        bits = check_bits(X)
        if isinstance(self.code_, TurboCodeSpec):
            return encode_turbo(self.code_, bits)
        return encode_conv(self.code_, bits)


class _ClassicalDecoder(ClassifierMixin, BaseEstimator):
    def _streams(self):
        return self.code.n_streams

    def fit(self, X=None, y=None):
        if X is not None:
            X = check_received(X, self._streams())
            self.n_features_in_ = X.shape[2]
        else:
            self.n_features_in_ = self._streams()
        self.classes_ = np.array([0, 1])
        return self

    def _llr(self, X):
        cfg = self.channel if self.channel is not None else ch.AWGN(self.sigma)
        return ch.symbol_llr(cfg, X, self.metric)

    def predict(self, X):
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    def score(self, X, y, sample_weight=None):
        """Mean bit accuracy."""
        return float(np.mean(self.predict(X) == check_bits(y)))


class ViterbiDecoder(_ClassicalDecoder):
    def __init__(self, code, sigma: float = 1.0):
        self.code = code
        self.sigma = sigma

    def predict(self, X):
        check_is_fitted(self, "classes_")
        X = check_received(X, self._streams())
        return viterbi_decode(build_trellis(self.code), X, self.sigma).bits

    def predict_proba(self, X):
        return self.predict(X).astype(np.float64)


class BCJRDecoder(_ClassicalDecoder):
    def __init__(self, code, sigma: float = 1.0, channel=None, metric: str = "gaussian"):
        self.code = code
        self.sigma = sigma
        self.channel = channel
        self.metric = metric

    def predict_proba(self, X, prior=None):
        check_is_fitted(self, "classes_")
        X = check_received(X, self._streams())
        return bcjr_decode(build_trellis(self.code), self._llr(X), prior).posterior

    def predict(self, X, prior=None):
        return (self.predict_proba(X, prior) > 0.5).astype(np.int64)


class TurboDecoder(_ClassicalDecoder):
    def __init__(self, code, sigma: float = 1.0, iterations: int = 6, heuristic=None, threshold=None,
                 channel=None, metric: str = "gaussian"):
        self.code = code
        self.sigma = sigma
        self.iterations = iterations
        self.heuristic = heuristic
        self.threshold = threshold
        self.channel = channel
        self.metric = metric

    def decode(self, X):
        check_is_fitted(self, "classes_")
        X = check_received(X, 3)
        L = apply_llr_heuristic(self._llr(X), self.heuristic, self.threshold)
        return turbo_decode_llr(self.code, L, self.iterations)

    def predict_proba(self, X):
        return self.decode(X).posterior

    def predict(self, X):
        return self.decode(X).bits


class RecurrentDecoder(ClassifierMixin, BaseEstimator):
    """Trainable recurrent decoder (stacked bi-GRU + batch norm by default).

    ``y`` passed to :meth:`fit` may hold hard bits or soft posteriors in
    [0, 1]; ``loss`` picks mean squared error or binary cross-entropy.
    """

    def __init__(self, hidden=64, depth=2, cell="gru", bidirectional=True, batchnorm=True,
                 learning_rate=1e-3, batch_size=200, epochs=10, clip_norm=1.0, loss="mse_posterior",
                 random_state=0):
        self.hidden = hidden
        self.depth = depth
        self.cell = cell
        self.bidirectional = bidirectional
        self.batchnorm = batchnorm
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.loss = loss
        self.random_state = random_state

    def fit(self, X, y):
        X = check_received(X)
        y = check_targets(y, X.shape[:2])
        self.spec_ = stacked_decoder(self.hidden, self.depth, self.cell, self.bidirectional,
                                     self.batchnorm, X.shape[2])
        cfg = TrainConfig(self.learning_rate, self.batch_size, self.epochs, self.clip_norm, self.loss)
        self.params_, self.loss_history_ = train(self.spec_, X, y, cfg, int(self.random_state or 0))
        self.n_features_in_ = X.shape[2]
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        return predict_proba(self.spec_, self.params_, check_received(X, self.n_features_in_))

    def predict(self, X):
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    def score(self, X, y, sample_weight=None):
        """Mean bit accuracy."""
        return float(np.mean(self.predict(X) == check_bits(y)))

    def save(self, path):
        check_is_fitted(self, "params_")
        save_model(path, self.spec_, self.params_, {"estimator": self.get_params()})

    @classmethod
    def load(cls, path):
        spec, params, meta = load_model(path)
        est = cls(**meta.get("estimator", {}))
        est.spec_, est.params_ = spec, params
        est.n_features_in_ = spec.input_width
        est.classes_ = np.array([0, 1])
        est.loss_history_ = []
        return est
