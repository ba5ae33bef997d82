"""Noise-floor estimate from quiet frames and the polarised reference mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_DIV = 1e-8


@dataclass(frozen=True)
class NoiseFloor:
    spectrum: np.ndarray
    frames_used: np.ndarray


def estimate_noise_floor(noisy_mag: np.ndarray, k: int = 32) -> NoiseFloor:
    """Average the magnitude of the ``k`` lowest-power frames.

    Frame power is the sum of squared magnitudes; ties go to the earlier frame.
    """
    mag = np.asarray(noisy_mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[0] < 1:
        raise ValueError(f"expected a (frames, bins) grid, got shape {mag.shape}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    power = np.sum(mag * mag, axis=1)
    chosen = np.argsort(power, kind="stable")[: min(k, mag.shape[0])]
    return NoiseFloor(spectrum=mag[chosen].mean(axis=0), frames_used=np.sort(chosen))


def reference_mask(enhanced_mag: np.ndarray, floor: NoiseFloor) -> np.ndarray:
    x = np.asarray(enhanced_mag, dtype=np.float64)
    return x / (x + floor.spectrum[None, :] + EPS_DIV)
