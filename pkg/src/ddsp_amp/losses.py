"""Time-domain MAE and multi-resolution STFT losses (differentiable)."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

FFT_SIZES = (128, 512, 2048)
LOG_EPS = 1e-7


def mae_loss(y, y_hat):
    if np.shape(ad.value(y)) != np.shape(ad.value(y_hat)):
        raise ValueError("MAE needs equal-length signals")
    return ad.mean(ad.absolute(y_hat - y))


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the STFT convention
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(x, size: int, hop: int | None = None):
    """|STFT| with a Hann window, no centering: (..., frames, size//2 + 1)."""
    hop = size // 4 if hop is None else hop
    fr = ad.frames(x, size, hop) * _hann(size)
    return ad.absolute(ad.rfft(fr, size))


def stft_terms(y, y_hat, size: int):
    """(spectral convergence, log-magnitude L1) for one resolution, batch-averaged."""
    mag = stft_magnitude(y, size)
    mag_hat = stft_magnitude(y_hat, size)
    axes = (-2, -1)
    diff = mag - mag_hat
    num = ad.sqrt(ad.sum(diff * diff, axis=axes))
    den = ad.sqrt(ad.sum(mag * mag, axis=axes))
    sc = ad.mean(num / den)
    log_l1 = ad.mean(ad.absolute(ad.log(mag + LOG_EPS) - ad.log(mag_hat + LOG_EPS)))
    return sc, log_l1


def mrstft_loss(y, y_hat, fft_sizes=FFT_SIZES):
    """Sum over resolutions of spectral convergence + log-magnitude L1.

    y is the reference; y_hat the estimate. Leading axes are batch axes and
    the per-item spectral convergence is averaged over them.
    """
    n = np.shape(ad.value(y))[-1]
    if np.shape(ad.value(y)) != np.shape(ad.value(y_hat)):
        raise ValueError("MR-STFT needs equal-length signals")
    if n < max(fft_sizes):
        raise ValueError(f"segments of {n} samples are shorter than the {max(fft_sizes)}-point window")
    total = 0.0
    for size in fft_sizes:
        sc, lm = stft_terms(y, y_hat, size)
        total = total + sc + lm
    return total


def total_loss(y, y_hat):
    return mae_loss(y, y_hat) + mrstft_loss(y, y_hat)
