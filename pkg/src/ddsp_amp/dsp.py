"""Filter design, biquad application, the hidden-size-1 GRU, gains and clipping."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import autodiff as ad

BUTTERWORTH_Q = 1.0 / math.sqrt(2.0)


class FilterKind(str, enum.Enum):
    LOW_SHELF = "lowshelf"
    PEAK = "peak"
    HIGH_SHELF = "highshelf"
    HIGH_PASS = "highpass"
    LOW_PASS = "lowpass"

    @property
    def has_gain(self) -> bool:
        return self in (FilterKind.LOW_SHELF, FilterKind.PEAK, FilterKind.HIGH_SHELF)


@dataclass(frozen=True)
class FilterSpec:
    kind: FilterKind
    fc: float
    gain_db: float = 0.0
    q: float = BUTTERWORTH_Q


@dataclass(frozen=True)
class BiquadCoeffs:
    """Second-order section with a0 normalized to 1."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    @classmethod
    def identity(cls) -> BiquadCoeffs:
        return cls(1.0, 0.0, 0.0, 0.0, 0.0)

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.b0, self.b1, self.b2, self.a1, self.a2)

    def is_stable(self) -> bool:
        return abs(self.a2) < 1.0 and abs(self.a1) < 1.0 + self.a2

    def response(self, freqs, fs: float) -> np.ndarray:
        """Complex frequency response at the given frequencies in Hz."""
        zinv = np.exp(-2j * np.pi * np.asarray(freqs, dtype=float) / fs)
        return (self.b0 + self.b1 * zinv + self.b2 * zinv**2) / (1.0 + self.a1 * zinv + self.a2 * zinv**2)


@dataclass
class BiquadState:
    s1: float = 0.0
    s2: float = 0.0


def cookbook(kind: FilterKind, fc, gain_db, q, fs: float):
    """Audio-EQ-cookbook coefficients (b0, b1, b2, a1, a2).

    Works on floats, arrays or tape variables, so the same formulas drive
    both plain design and the differentiable training path.
    """
    w0 = (2.0 * math.pi / fs) * fc
    cw = ad.cos(w0)
    alpha = ad.sin(w0) / (2.0 * q)
    if kind is FilterKind.LOW_PASS:
        b0 = (1.0 - cw) * 0.5
        b1 = 1.0 - cw
        b2 = b0
        a0, a1, a2 = 1.0 + alpha, -2.0 * cw, 1.0 - alpha
    elif kind is FilterKind.HIGH_PASS:
        b0 = (1.0 + cw) * 0.5
        b1 = -(1.0 + cw)
        b2 = b0
        a0, a1, a2 = 1.0 + alpha, -2.0 * cw, 1.0 - alpha
    else:
        amp = ad.exp(gain_db * (math.log(10.0) / 40.0))
        if kind is FilterKind.PEAK:
            b0, b1, b2 = 1.0 + alpha * amp, -2.0 * cw, 1.0 - alpha * amp
            a0, a1, a2 = 1.0 + alpha / amp, -2.0 * cw, 1.0 - alpha / amp
        else:
            ap, am = amp + 1.0, amp - 1.0
            k = 2.0 * ad.sqrt(amp) * alpha
            if kind is FilterKind.LOW_SHELF:
                b0 = amp * (ap - am * cw + k)
                b1 = 2.0 * amp * (am - ap * cw)
                b2 = amp * (ap - am * cw - k)
                a0 = ap + am * cw + k
                a1 = -2.0 * (am + ap * cw)
                a2 = ap + am * cw - k
            else:
                b0 = amp * (ap + am * cw + k)
                b1 = -2.0 * amp * (am + ap * cw)
                b2 = amp * (ap + am * cw - k)
                a0 = ap - am * cw + k
                a1 = 2.0 * (am - ap * cw)
                a2 = ap - am * cw - k
    inv = 1.0 / a0
    return b0 * inv, b1 * inv, b2 * inv, a1 * inv, a2 * inv


def design_biquad(spec: FilterSpec, fs: float) -> BiquadCoeffs:
    """Design one section from a FilterSpec.

    Shelf and peak filters with exactly 0 dB gain have identical numerator and
    denominator; the common factor is cancelled and the identity is returned.
    """
    kind = FilterKind(spec.kind)
    vals = (spec.fc, spec.gain_db, spec.q, fs)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite filter parameters: {spec}")
    if fs <= 0:
        raise ValueError(f"sample rate must be positive, got {fs}")
    if not 0 < spec.fc < fs / 2:
        raise ValueError(f"fc={spec.fc} Hz must lie in (0, {fs / 2})")
    if not 0 < spec.q <= 32:
        raise ValueError(f"q={spec.q} outside (0, 32]")
    if kind.has_gain and not -40 <= spec.gain_db <= 40:
        raise ValueError(f"gain_db={spec.gain_db} outside [-40, 40]")
    if kind.has_gain and spec.gain_db == 0:
        return BiquadCoeffs.identity()
    return BiquadCoeffs(*(float(c) for c in cookbook(kind, spec.fc, spec.gain_db, spec.q, fs)))


def _check_coeffs(coeffs: BiquadCoeffs):
    if not all(math.isfinite(c) for c in coeffs.as_tuple()):
        raise ValueError(f"non-finite biquad coefficients: {coeffs}")


def biquad_process_td(coeffs: BiquadCoeffs, state: BiquadState, x) -> tuple[np.ndarray, BiquadState]:
    """Recursive direct-form II transposed filtering with carried state."""
    _check_coeffs(coeffs)
    x = np.ascontiguousarray(x, dtype=float)
    y, s1, s2 = _kernels.biquad_td(*coeffs.as_tuple(), x, state.s1, state.s2)
    return y, BiquadState(s1, s2)


def fs_length(n: int) -> int:
    """FFT size used for frequency-sampling a length-n segment."""
    return 1 << max(1, (2 * n - 1).bit_length())


def biquad_cascade_fs(coeffs, x):
    """Apply a cascade of biquads to x (..., L) by frequency sampling.

    ``coeffs`` is a sequence of 5-tuples whose entries may be floats, arrays
    broadcastable against (..., 1), or tape variables. The segment is padded
    to the next power of two >= 2L and the first L output samples are kept.
    """
    length = np.shape(ad.value(x))[-1]
    n = fs_length(length)
    y = ad.irfft(ad.rfft(x, n) * ad.biquad_cascade_response(list(coeffs), n), n)
    return ad.getitem(y, (..., slice(0, length)))


def biquad_process_fs(coeffs, segment):
    """Single-biquad frequency-sampling application (differentiable)."""
    if isinstance(coeffs, BiquadCoeffs):
        _check_coeffs(coeffs)
        coeffs = coeffs.as_tuple()
    elif not all(np.all(np.isfinite(ad.value(c))) for c in coeffs):
        raise ValueError("non-finite biquad coefficients")
    if np.shape(ad.value(segment))[-1] == 0:
        raise ValueError("segment must be non-empty")
    return biquad_cascade_fs([coeffs], segment)


def impulse_response(coeffs: BiquadCoeffs, n: int) -> np.ndarray:
    """Closed-form impulse response from the pole pair (partial fractions)."""
    b0, b1, b2, a1, a2 = coeffs.as_tuple()
    p1, p2 = np.roots([1.0, a1, a2]).astype(complex)
    k = np.arange(n + 1)
    if abs(p1 - p2) > 1e-12:
        g = (p1 ** (k + 1) - p2 ** (k + 1)) / (p1 - p2)
    else:
        g = (k + 1) * p1**k
    g = g.real
    h = b0 * g[:n]
    h[1:] += b1 * g[: n - 1]
    h[2:] += b2 * g[: n - 2]
    return h


GRU1_FIELDS = ("w_r", "w_z", "w_c", "u_r", "u_z", "u_c", "b_r", "b_z", "b_c")


@dataclass
class Gru1Params:
    w_r: float = 0.0
    w_z: float = 0.0
    w_c: float = 0.0
    u_r: float = 0.0
    u_z: float = 0.0
    u_c: float = 0.0
    b_r: float = 0.0
    b_z: float = 0.0
    b_c: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in GRU1_FIELDS])

    @classmethod
    def from_array(cls, arr) -> Gru1Params:
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (9,):
            raise ValueError(f"GRU-1 needs exactly 9 parameters, got shape {arr.shape}")
        return cls(*arr.tolist())


@dataclass
class Gru1State:
    h: float = 0.0


def _sigmoid(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))


def gru1_step(p: Gru1Params, x: float, state: Gru1State) -> tuple[float, Gru1State]:
    h = state.h
    r = _sigmoid(p.w_r * x + p.u_r * h + p.b_r)
    z = _sigmoid(p.w_z * x + p.u_z * h + p.b_z)
    c = math.tanh(p.w_c * x + r * p.u_c * h + p.b_c)
    h = (1.0 - z) * c + z * h
    return h, Gru1State(h)


def gru1_process(p, segment, state: Gru1State | None = None) -> tuple[np.ndarray, Gru1State]:
    """Run the GRU-1 recurrence over a 1-D segment with carried state."""
    arr = p.to_array() if isinstance(p, Gru1Params) else np.asarray(p, dtype=float)
    x = np.ascontiguousarray(np.asarray(segment, dtype=float).reshape(1, -1))
    h0 = np.array([0.0 if state is None else state.h])
    hs = _kernels.gru1_forward(arr, x, h0)[0][0]
    return hs, Gru1State(float(hs[-1]) if hs.size else h0[0])


def soft_clip(x, drive):
    """tanh(drive * x)."""
    if np.any(ad.value(drive) <= 0):
        raise ValueError("drive must be positive")
    return ad.tanh(drive * x)


def apply_gain(segment, g):
    if not np.all(np.isfinite(ad.value(g))):
        raise ValueError("gain must be finite")
    if not isinstance(segment, ad.Var):
        segment = np.asarray(segment, dtype=float)
    return segment * g
