"""STFT analysis/synthesis and magnitude masking."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from .errors import ConfigError, ConfigMismatch, DataError, InputTooShort, ShapeMismatch

WINDOWS = ("hann", "hamming", "boxcar")
EDGE_NORM_FLOOR = 0.1


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise DataError(f"expected mono samples, got shape {x.shape}")
        if x.size < 1:
            raise DataError("clip has no samples")
        if not np.all(np.isfinite(x)):
            raise DataError("clip contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    hop: int = 128
    window: str = "hann"

    def __post_init__(self):
        n = int(self.fft_size)
        if n < 2 or n & (n - 1):
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 1 <= int(self.hop) <= n:
            raise ConfigError(f"hop must be in [1, fft_size], got {self.hop}")
        if self.window not in WINDOWS:
            raise ConfigError(f"unknown window {self.window!r}; choose from {WINDOWS}")
        if not signal.check_COLA(self.analysis_window(), n, n - int(self.hop)):
            raise ConfigError(f"{self.window} window is not COLA at hop {self.hop}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def analysis_window(self) -> np.ndarray:
        # periodic (DFT-even) windows
        return signal.get_window(self.window, self.fft_size, fftbins=True).astype(np.float64)


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude/phase grids of shape (frames, bins).

    ``length`` is the sample count of the analysed clip so that synthesis can
    trim the zero-padded tail. ``clamped_bins`` counts bins whose magnitude was
    forced to zero by a negative mask entry.
    """

    magnitude: np.ndarray
    phase: np.ndarray
    frame_hop: int
    fft_size: int
    length: int
    sample_rate: int
    clamped_bins: int = field(default=0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.magnitude.shape

    def complex(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.phase)


def n_frames(length: int, cfg: StftConfig) -> int:
    if length < cfg.fft_size:
        raise InputTooShort(f"clip of {length} samples is shorter than one frame ({cfg.fft_size})")
    return 1 + -(-(length - cfg.fft_size) // cfg.hop)


def stft(clip: AudioClip, cfg: StftConfig = StftConfig()) -> Spectrogram:
    length = len(clip)
    T = n_frames(length, cfg)
    padded = np.zeros((T - 1) * cfg.hop + cfg.fft_size)
    padded[:length] = clip.samples
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.fft_size)[:: cfg.hop]
    Z = np.fft.rfft(frames * cfg.analysis_window(), axis=1)
    return Spectrogram(
        magnitude=np.abs(Z),
        phase=np.angle(Z),
        frame_hop=cfg.hop,
        fft_size=cfg.fft_size,
        length=length,
        sample_rate=clip.sample_rate,
    )


def istft(spec: Spectrogram, cfg: StftConfig = StftConfig()) -> AudioClip:
    T, F = spec.shape
    if spec.fft_size != cfg.fft_size or spec.frame_hop != cfg.hop or F != cfg.n_bins:
        raise ConfigMismatch(
            f"spectrogram (fft={spec.fft_size}, hop={spec.frame_hop}, bins={F}) "
            f"does not match config (fft={cfg.fft_size}, hop={cfg.hop})"
        )
    w = cfg.analysis_window()
    frames = np.fft.irfft(spec.complex(), n=cfg.fft_size, axis=1) * w
    total = (T - 1) * cfg.hop + cfg.fft_size
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(T):
        s = t * cfg.hop
        out[s : s + cfg.fft_size] += frames[t]
        norm[s : s + cfg.fft_size] += w * w
    # edge samples covered only by window tails would be amplified without bound
    out /= np.maximum(norm, EDGE_NORM_FLOOR * norm.max())
    return AudioClip(out[: spec.length], spec.sample_rate)


def apply_mask(spec: Spectrogram, mask: np.ndarray) -> Spectrogram:
    """Scale magnitudes by ``mask``; negative products are clamped to zero.

    The mask itself is left untouched so callers can still penalise its
    negative entries.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != spec.shape:
        raise ShapeMismatch(f"mask shape {mask.shape} != spectrogram shape {spec.shape}")
    prod = mask * spec.magnitude
    negative = prod < 0
    return replace(spec, magnitude=np.where(negative, 0.0, prod), clamped_bins=int(negative.sum()))
