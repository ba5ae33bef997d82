"""Mono WAV I/O (16-bit PCM and 32-bit float)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import AudioClip
from .errors import FormatError, IoError

PCM16_SCALE = 32768.0


def read_wav(path: str | Path) -> AudioClip:
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as exc:
        raise IoError(str(exc)) from exc
    except (ValueError, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise FormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, rate)


def write_wav(path: str | Path, clip: AudioClip, fmt: str = "pcm16") -> None:
    x = np.clip(clip.samples, -1.0, 1.0)
    if fmt == "pcm16":
        data = np.clip(np.round(x * PCM16_SCALE), -32768, 32767).astype("<i2")
    elif fmt == "float32":
        data = x.astype("<f4")
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    try:
        wavfile.write(path, clip.sample_rate, data)
    except OSError as exc:
        raise IoError(str(exc)) from exc
