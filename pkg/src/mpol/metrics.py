"""Signal metrics, mask-distribution diagnostics and per-utterance records."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import UndefinedMetric

SI_SDR_CAP = 200.0
SSNR_MIN, SSNR_MAX = -10.0, 35.0
SILENT_FRAME_POWER = 1e-10
DEFAULT_EDGES = np.linspace(-0.25, 1.25, 11)


def _samples(x) -> np.ndarray:
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, capped at +/-200 dB."""
    est, ref = _samples(estimate), _samples(reference)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = ref @ ref
    if ref_energy == 0.0:
        raise UndefinedMetric("reference signal is all zero")
    target = (est @ ref) / ref_energy * ref
    num = target @ target
    den = (target - est) @ (target - est)
    if num == 0.0 or num < den * 10 ** (-SI_SDR_CAP / 10):
        return -SI_SDR_CAP
    if den == 0.0 or num > den * 10 ** (SI_SDR_CAP / 10):
        return SI_SDR_CAP
    return float(10 * np.log10(num / den))


def ssnr(estimate, reference, frame_len: int = 512, hop: int = 256) -> float:
    """Segmental SNR: mean of per-frame SNRs clamped to [-10, 35] dB."""
    est, ref = _samples(estimate), _samples(reference)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    if ref.size < frame_len:
        raise UndefinedMetric("signal shorter than one frame")
    R = np.lib.stride_tricks.sliding_window_view(ref, frame_len)[::hop]
    E = np.lib.stride_tricks.sliding_window_view(est, frame_len)[::hop]
    sig = np.mean(R * R, axis=1)
    noise = np.mean((R - E) ** 2, axis=1)
    keep = sig >= SILENT_FRAME_POWER
    if not keep.any():
        raise UndefinedMetric("no frame of the reference is above the silence threshold")
    sig, noise = sig[keep], noise[keep]
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(sig / noise)
    return float(np.mean(np.clip(snr, SSNR_MIN, SSNR_MAX)))


@dataclass(frozen=True)
class MaskHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow

    def __add__(self, other: "MaskHistogram") -> "MaskHistogram":
        if not np.array_equal(self.bin_edges, other.bin_edges):
            raise ValueError("cannot add histograms with different edges")
        return MaskHistogram(self.bin_edges, self.counts + other.counts,
                             self.underflow + other.underflow, self.overflow + other.overflow)


def mask_histogram(m: np.ndarray, edges=DEFAULT_EDGES) -> MaskHistogram:
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be a strictly increasing sequence of at least two values")
    idx = np.searchsorted(edges, np.asarray(m, dtype=np.float64).ravel(), side="right") - 1
    n_bins = edges.size - 1
    under = int(np.sum(idx < 0))
    over = int(np.sum(idx >= n_bins))
    inside = idx[(idx >= 0) & (idx < n_bins)]
    return MaskHistogram(edges, np.bincount(inside, minlength=n_bins), under, over)


def format_histogram(hist: MaskHistogram) -> str:
    lines = [f"# underflow {hist.underflow}", f"# overflow {hist.overflow}", "# edge count"]
    lines += [f"{float(e)!r} {int(c)}" for e, c in zip(hist.bin_edges[:-1], hist.counts)]
    return "\n".join(lines) + "\n"


def bimodality(m: np.ndarray) -> float:
    """Pearson bimodality coefficient (skew^2 + 1) / kurtosis of the entries."""
    x = np.asarray(m, dtype=np.float64).ravel()
    if x.size < 4:
        raise UndefinedMetric("need at least 4 entries")
    d = x - x.mean()
    d2 = d * d
    var = np.mean(d2)
    if var == 0.0:
        raise UndefinedMetric("mask entries have zero variance")
    skew = np.mean(d2 * d) / var**1.5
    kurt = np.mean(d2 * d2) / var**2
    return float((skew * skew + 1.0) / kurt)


@dataclass
class UtteranceRecord:
    utterance_id: str
    si_sdr_in: float
    si_sdr_out: float
    ssnr_in: float
    ssnr_out: float
    l_w: float
    l_s: float
    total_loss: float
    neg_bin_count: int
    bimodality_m: float
    bimodality_mp: float
    rtf: float


RECORD_FIELDS = [f.name for f in fields(UtteranceRecord)]


def records_to_csv(records: list[UtteranceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
    return buf.getvalue()


def records_from_csv(text: str) -> list[UtteranceRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        vals = {}
        for f in fields(UtteranceRecord):
            raw = row[f.name]
            vals[f.name] = raw if f.type == "str" else int(raw) if f.type == "int" else float(raw)
        out.append(UtteranceRecord(**vals))
    return out
