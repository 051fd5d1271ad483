"""Synthetic guitar-like material and a known knob-controlled reference amp.

The reference chain is built only from fixed biquads, static tanh stages and
a one-pole-memory nonlinearity, so a trained model can be checked against a
device whose behaviour is exactly known.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from . import dsp
from .amp import FS
from .dsp import FilterKind, FilterSpec
from .trainer import Dataset, Pair

SEEN_KNOBS = (
    (0.5, 0.5, 0.5, 0.5, 0.5),
    (0.9, 0.3, 0.7, 0.6, 0.8),
    (0.2, 0.8, 0.4, 0.3, 0.6),
    (0.7, 0.6, 0.2, 0.8, 0.4),
    (0.4, 0.2, 0.8, 0.7, 0.9),
)
UNSEEN_KNOBS = ((0.6, 0.4, 0.6, 0.4, 0.7),)


def guitar_like(seconds: float, rng: np.random.Generator, fs: float = FS) -> np.ndarray:
    """Overlapping decaying harmonic notes over a -60 dB noise floor."""
    n = int(round(seconds * fs))
    out = np.zeros(n)
    t_all = np.arange(n) / fs
    onset = 0.0
    while onset < seconds:
        start = int(onset * fs)
        dur = min(n - start, int(rng.uniform(0.8, 2.5) * fs))
        t = t_all[:dur]
        f0 = 82.4 * 2 ** (rng.integers(0, 30) / 12)
        amp = rng.uniform(0.05, 0.5)
        tau = rng.uniform(0.25, 1.2)
        note = np.zeros(dur)
        for k in range(1, 16):
            fk = k * f0
            if fk > 0.45 * fs:
                break
            note += np.sin(2 * np.pi * fk * t + rng.uniform(0, 2 * np.pi)) / k ** rng.uniform(0.8, 1.6)
        attack = np.minimum(1.0, t / 0.004)
        out[start : start + dur] += amp * attack * np.exp(-t / tau) * note / 2.5
        onset += rng.uniform(0.12, 0.6)
    out += 1e-3 * rng.standard_normal(n)
    return out


def _filt(spec: FilterSpec, x):
    c = dsp.design_biquad(spec, FS)
    return lfilter([c.b0, c.b1, c.b2], [1.0, c.a1, c.a2], x)


def reference_amp(x, knobs) -> np.ndarray:
    """Known knob-controlled target device (gain, bass, mid, treble, master)."""
    gain, bass, mid, treble, master = (float(k) for k in knobs)
    x = _filt(FilterSpec(FilterKind.HIGH_SHELF, 2000.0, -4.0, 0.707), x)
    pre = 10 ** ((6.0 + 24.0 * gain) / 20.0)
    u = np.tanh(pre * x + 0.3) - np.tanh(0.3)  # biased, asymmetric stage
    u = 0.5 * _filt(FilterSpec(FilterKind.LOW_SHELF, 150.0, 4.0, 0.707), u)
    u = _filt(FilterSpec(FilterKind.LOW_SHELF, 120.0, -12.0 + 24.0 * bass, 0.707), u)
    u = _filt(FilterSpec(FilterKind.PEAK, 700.0, -9.0 + 18.0 * mid, 0.8), u)
    u = _filt(FilterSpec(FilterKind.HIGH_SHELF, 3200.0, -12.0 + 24.0 * treble, 0.707), u)
    m = 10 ** (-20.0 * (1.0 - master) / 20.0)
    v = np.tanh(2.5 * m * u)
    s = lfilter([0.01], [1.0, -0.99], v)  # one-pole memory of the drive level
    w = np.tanh(1.5 * v - 0.8 * s)
    w = _filt(FilterSpec(FilterKind.HIGH_PASS, 60.0), w)
    w = _filt(FilterSpec(FilterKind.LOW_PASS, 7000.0), w)
    return 0.6 * w


def synthetic_dataset(seconds_per_setting: float = 36.0, seed: int = 0, unseen_seconds: float = 12.0,
                      seen_knobs=SEEN_KNOBS, unseen_knobs=UNSEEN_KNOBS) -> Dataset:
    """One pair per knob setting; the default is 3 minutes of seen material."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i, k in enumerate(seen_knobs):
        x = guitar_like(seconds_per_setting, rng)
        pairs.append(Pair(f"seen{i}", x, reference_amp(x, k), np.array(k)))
    for i, k in enumerate(unseen_knobs):
        if unseen_seconds > 0:
            x = guitar_like(unseen_seconds, rng)
            pairs.append(Pair(f"unseen{i}", x, reference_amp(x, k), np.array(k), unseen=True))
    return Dataset(pairs)
