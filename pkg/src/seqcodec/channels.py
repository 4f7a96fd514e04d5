"""Noise channels, SNR arithmetic and channel log-likelihood ratios.

SNR is ``-10 log10(sigma^2)`` for unit-power +-1 symbols.  Gaussian-based
channels draw their Gaussian component first, so a bursty channel with zero
burst probability reproduces the AWGN channel exactly under the same stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class ChannelConfigError(ValueError):
    pass


def snr_to_sigma(snr_db: float) -> float:
    if not math.isfinite(snr_db):
        raise ChannelConfigError("SNR must be finite")
    return 10.0 ** (-snr_db / 20.0)


def sigma_to_snr(sigma: float) -> float:
    return -10.0 * math.log10(sigma * sigma)


def block_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for ``(seed, *key)``.

    Sweeps key streams by (SNR index, block index) so results do not depend
    on how blocks are scheduled across workers.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class AWGN:
    sigma: float = 1.0
    kind = "awgn"

    def _check(self):
        if not self.sigma >= 0:
            raise ChannelConfigError("sigma must be >= 0")


@dataclass(frozen=True)
class StudentT:
    """Student-t noise with ``nu`` degrees of freedom, scaled to variance sigma^2."""

    nu: float = 3.0
    sigma: float = 1.0
    kind = "t"

    def _check(self):
        if not self.sigma >= 0:
            raise ChannelConfigError("sigma must be >= 0")
        if not self.nu > 2:
            raise ChannelConfigError("StudentT needs nu > 2 for a finite variance")

    @property
    def scale(self) -> float:
        return self.sigma * math.sqrt((self.nu - 2.0) / self.nu)


@dataclass(frozen=True)
class Bursty:
    """Gaussian noise plus, with probability ``rho`` per symbol, N(0, sigma_b^2)."""

    sigma: float = 1.0
    sigma_b: float = 5.0
    rho: float = 0.05
    kind = "bursty"

    def _check(self):
        if not (self.sigma >= 0 and self.sigma_b >= 0):
            raise ChannelConfigError("noise std must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ChannelConfigError("burst probability must lie in [0, 1]")


@dataclass(frozen=True)
class FixedBurst:
    """Gaussian noise plus a constant ``amplitude`` on every symbol of step ``position``."""

    sigma: float = 1.0
    amplitude: float = 5.0
    position: int = 50
    kind = "fixed-burst"

    def _check(self):
        if not self.sigma >= 0:
            raise ChannelConfigError("sigma must be >= 0")
        if self.position < 0:
            raise ChannelConfigError("burst position must be >= 0")


ChannelConfig = AWGN | StudentT | Bursty | FixedBurst


def with_snr(cfg: ChannelConfig, snr_db: float) -> ChannelConfig:
    return replace(cfg, sigma=snr_to_sigma(snr_db))


def channel_id(cfg: ChannelConfig) -> str:
    if isinstance(cfg, StudentT):
        return f"t(nu={cfg.nu:g})"
    if isinstance(cfg, Bursty):
        return f"bursty(sigma_b={cfg.sigma_b:g};rho={cfg.rho:g})"
    if isinstance(cfg, FixedBurst):
        return f"fixed-burst(B={cfg.amplitude:g};pos={cfg.position})"
    return "awgn"


def transmit(cfg: ChannelConfig, codeword, rng: np.random.Generator) -> np.ndarray:
    """Add channel noise to ``codeword`` (shape ``(..., K, n)`` for FixedBurst)."""
    cfg._check()
    x = np.asarray(codeword, dtype=np.float64)
    if x.size == 0:
        raise ChannelConfigError("codeword must be non-empty")
    if isinstance(cfg, StudentT):
        return x + cfg.scale * rng.standard_t(cfg.nu, size=x.shape)
    y = x + cfg.sigma * rng.standard_normal(x.shape)
    if isinstance(cfg, Bursty):
        hit = rng.random(x.shape) < cfg.rho
        w = cfg.sigma_b * rng.standard_normal(x.shape)
        y = y + np.where(hit, w, 0.0)
    elif isinstance(cfg, FixedBurst):
        if x.ndim < 2:
            raise ChannelConfigError("FixedBurst needs codewords shaped (..., K, n)")
        if cfg.position >= x.shape[-2]:
            raise ChannelConfigError("burst position outside the block")
        y[..., cfg.position, :] += cfg.amplitude
    return y


def channel_llr(received, sigma: float) -> np.ndarray:
    """Gaussian-metric symbol LLR ``2 y / sigma^2``; positive favours +1."""
    if not sigma > 0:
        raise ChannelConfigError("channel LLR needs sigma > 0")
    return 2.0 * np.asarray(received, dtype=np.float64) / (sigma * sigma)


def t_llr(received, nu: float, sigma: float) -> np.ndarray:
    """Exact symbol LLR under variance-normalised Student-t noise."""
    cfg = StudentT(nu, sigma)
    cfg._check()
    if not sigma > 0:
        raise ChannelConfigError("channel LLR needs sigma > 0")
    y = np.asarray(received, dtype=np.float64)
    d = nu * cfg.scale ** 2
    return -0.5 * (nu + 1.0) * (np.log1p((y - 1.0) ** 2 / d) - np.log1p((y + 1.0) ** 2 / d))


def bursty_llr(received, sigma: float, sigma_b: float, rho: float) -> np.ndarray:
    """Exact symbol LLR under the two-component Gaussian mixture."""
    y = np.asarray(received, dtype=np.float64)
    s2 = sigma * sigma + sigma_b * sigma_b

    def logpdf(x, var):
        return -0.5 * x * x / var - 0.5 * np.log(2 * np.pi * var)

    def loglik(c):
        quiet = np.log1p(-rho) + logpdf(y - c, sigma * sigma) if rho < 1 else -np.inf
        burst = np.log(rho) + logpdf(y - c, s2) if rho > 0 else -np.inf
        return np.logaddexp(quiet, burst)

    return loglik(1.0) - loglik(-1.0)


def symbol_llr(cfg: ChannelConfig, received, metric: str = "gaussian") -> np.ndarray:
    """Symbol LLRs under the chosen decoder metric.

    ``gaussian`` ignores the true channel (the standard receiver); ``exact``
    uses the channel's own likelihood where one is available.
    """
    if metric == "gaussian":
        return channel_llr(received, cfg.sigma)
    if metric != "exact":
        raise ChannelConfigError(f"unknown metric {metric!r}")
    if isinstance(cfg, StudentT):
        return t_llr(received, cfg.nu, cfg.sigma)
    if isinstance(cfg, Bursty):
        return bursty_llr(received, cfg.sigma, cfg.sigma_b, cfg.rho)
    return channel_llr(received, cfg.sigma)
