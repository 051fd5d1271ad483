"""Mono 44.1 kHz WAV reading and 32-bit float writing."""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 44100


class AudioFormatError(ValueError):
    pass


def read_wav(path) -> np.ndarray:
    """Return float64 samples in [-1, 1] from PCM16/24/32 or float32 mono WAV."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except ValueError as exc:
        raise AudioFormatError(f"{path}: malformed WAV ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"{path}: sample rate {rate} Hz, only {SAMPLE_RATE} Hz is supported")
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: {data.shape[1]} channels, only mono is supported")
    if data.dtype == np.int16:
        return data / 32768.0
    if data.dtype == np.int32:  # 24-bit arrives left-justified in int32
        return data / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")


def write_wav(path, samples) -> None:
    """Write mono 32-bit float WAV at 44.1 kHz."""
    data = np.asarray(samples, dtype=np.float32).reshape(-1)
    wavfile.write(Path(path), SAMPLE_RATE, data)
