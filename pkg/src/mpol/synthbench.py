"""Synthetic speech-in-noise corpora, source training and the shift benchmark.

"Speech" is a harmonic complex with a pitch contour, a formant-like spectral
envelope and syllable-rate on/off gating, which is enough spectral
concentration for masking and noise-floor estimation to behave as they do on
real speech. Domain shift is produced by changing the noise colour and/or the
pitch range.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .adapter import AdaptConfig, OptimizerState, adapt_utterance, enhance
from .dsp import AudioClip, StftConfig, stft
from .errors import ConfigError, TrainingDiverged
from .metrics import UtteranceRecord, bimodality, si_sdr, ssnr
from .model import MaskNet, features

log = logging.getLogger(__name__)

SPEECH_KINDS = ("harmonic", "pulse")
NOISE_KINDS = ("white", "pink", "babble", "bandpass")


@dataclass(frozen=True)
class CorpusSpec:
    n_utterances: int = 30
    duration_s: float = 3.0
    sample_rate: int = 16000
    speech_kind: str = "harmonic"
    noise_kind: str = "white"
    snr_db: float = 5.0
    seed: int = 0
    pitch_low: float = 100.0
    pitch_high: float = 180.0

    def __post_init__(self):
        if self.n_utterances < 1:
            raise ConfigError("n_utterances must be >= 1")
        if self.duration_s < 1.0:
            raise ConfigError("duration_s must be >= 1 s")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.speech_kind not in SPEECH_KINDS:
            raise ConfigError(f"speech_kind must be one of {SPEECH_KINDS}")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"noise_kind must be one of {NOISE_KINDS}")
        if not np.isfinite(self.snr_db):
            raise ConfigError("snr_db must be finite")
        if not 0 < self.pitch_low <= self.pitch_high < self.sample_rate / 2:
            raise ConfigError("need 0 < pitch_low <= pitch_high < Nyquist")


@dataclass(frozen=True)
class Utterance:
    clean: AudioClip
    noise: AudioClip
    noisy: AudioClip
    uid: str


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    batch_frames: int = 256
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_frames < 1 or not self.learning_rate > 0:
            raise ConfigError("epochs >= 0, batch_frames >= 1 and learning_rate > 0 required")


# -- corpus -----------------------------------------------------------------


def _speech(rng: np.random.Generator, spec: CorpusSpec) -> np.ndarray:
    sr = spec.sample_rate
    n = int(round(spec.duration_s * sr))
    t = np.arange(n) / sr
    f0_base = rng.uniform(spec.pitch_low, spec.pitch_high)
    vib = rng.uniform(0.05, 0.15) * f0_base
    f0 = f0_base + vib * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    formants = rng.uniform([500, 1200, 2400], [800, 1800, 3200])
    x = np.zeros(n)
    n_harm = int(spec.sample_rate / 2 / (f0_base * 1.2))
    for h in range(1, n_harm + 1):
        fh = h * f0_base
        if spec.speech_kind == "harmonic":
            amp = sum(np.exp(-0.5 * ((fh - f) / 200.0) ** 2) for f in formants) + 0.05 / h
        else:
            amp = 1.0 if fh < 4000 else 0.0
        x += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    # syllable gating with pauses so quiet frames exist for the noise floor
    env = np.zeros(n)
    pos = int(rng.uniform(0.1, 0.3) * sr)
    while pos < n:
        length = int(rng.uniform(0.15, 0.4) * sr)
        seg = np.hanning(length) ** 0.5 * rng.uniform(0.5, 1.0)
        end = min(n, pos + length)
        env[pos:end] = seg[: end - pos]
        pos = end + int(rng.uniform(0.08, 0.35) * sr)
    x *= env
    return 0.1 * x / np.sqrt(np.mean(x * x) + 1e-12)


def _noise(rng: np.random.Generator, spec: CorpusSpec, n: int) -> np.ndarray:
    sr = spec.sample_rate
    kind = spec.noise_kind
    if kind == "white":
        return rng.standard_normal(n)
    if kind == "pink":
        white = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / sr)
        f[0] = f[1]
        return np.fft.irfft(white / np.sqrt(f), n)
    if kind == "babble":
        t = np.arange(n) / sr
        out = np.zeros(n)
        for _ in range(6):
            f0 = rng.uniform(90, 250)
            detune = 1.0 + rng.uniform(-0.02, 0.02)
            for h in range(1, int(4000 / f0)):
                out += np.sin(2 * np.pi * h * f0 * detune * t + rng.uniform(0, 2 * np.pi)) / h
        return out + 0.05 * rng.standard_normal(n) * np.std(out)
    lo, hi = 300.0, min(3400.0, 0.45 * sr)
    sos = signal.butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
    return signal.sosfilt(sos, rng.standard_normal(n))


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Scale ``noise`` so that ||clean||^2 / ||noise||^2 equals ``snr_db``."""
    gain = np.sqrt(np.sum(clean**2) / (np.sum(noise**2) * 10 ** (snr_db / 10)))
    return gain * noise


def generate_corpus(spec: CorpusSpec) -> list[Utterance]:
    rng = np.random.default_rng(spec.seed)
    out = []
    for i in range(spec.n_utterances):
        x = _speech(rng, spec)
        n = mix_at_snr(x, _noise(rng, spec, x.size), spec.snr_db)
        sr = spec.sample_rate
        out.append(Utterance(AudioClip(x, sr), AudioClip(n, sr), AudioClip(x + n, sr), f"utt{i:04d}"))
    return out


def parse_corpus_spec(text: str) -> CorpusSpec:
    """``key = value`` lines naming CorpusSpec fields."""
    kinds = {k: type(v) for k, v in asdict(CorpusSpec()).items()}
    vals = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep or key not in kinds:
            raise ConfigError(f"line {lineno}: unknown or malformed entry {raw!r}")
        try:
            vals[key] = kinds[key](val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    return CorpusSpec(**vals)


def format_corpus_spec(spec: CorpusSpec) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(spec).items())


def load_corpus_spec(path: str | Path) -> CorpusSpec:
    try:
        return parse_corpus_spec(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read corpus spec {path}: {exc}") from exc


# -- source training --------------------------------------------------------


def _training_frames(corpus: list[Utterance], stft_cfg: StftConfig) -> tuple[np.ndarray, np.ndarray]:
    Y, X = [], []
    for utt in corpus:
        Y.append(stft(utt.noisy, stft_cfg).magnitude)
        X.append(stft(utt.clean, stft_cfg).magnitude)
    return np.concatenate(Y), np.concatenate(X)


def train_source(corpus: list[Utterance], net: MaskNet, cfg: TrainConfig = TrainConfig(),
                 stft_cfg: StftConfig = StftConfig()) -> list[float]:
    """Fit all parameters of ``net`` by MSE between M*Y and X magnitudes.

    Uses plain Adam over shuffled frame minibatches and re-snapshots the
    source weights when done. Returns the mean training loss per epoch.
    """
    history: list[float] = []
    if cfg.epochs == 0:
        return history
    Y, X = _training_frames(corpus, stft_cfg)
    feats = features(Y)
    rng = np.random.default_rng(cfg.seed)
    params = net.params
    m = np.zeros(net.n_params)
    v = np.zeros(net.n_params)
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(Y.shape[0])
        total, count = 0.0, 0
        for start in range(0, order.size, cfg.batch_frames):
            idx = order[start : start + cfg.batch_frames]
            mask, cache = net.forward(feats[idx])
            err = mask * Y[idx] - X[idx]
            loss = float(np.mean(err * err))
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch + 1}")
            grad = net.backward(cache, 2.0 * err * Y[idx] / err.size, scope="all").values
            t += 1
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            step = cfg.learning_rate * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            params.set_all(params.theta - step)
            total += loss * idx.size
            count += idx.size
        history.append(total / count)
        log.info("epoch %d: mse %.6g", epoch + 1, history[-1])
    params.rebase()
    return history


# -- benchmark --------------------------------------------------------------


@dataclass(frozen=True)
class BenchConfig:
    train_utterances: int = 60
    test_utterances: int = 30
    hidden: tuple[int, ...] = (256, 256)
    train: TrainConfig = field(default_factory=TrainConfig)
    stft: StftConfig = field(default_factory=StftConfig)


@dataclass
class SeedResult:
    """Per-seed outcome. ``source``/``adapted`` are target-domain records;
    ``in_domain_source``/``in_domain_adapted`` repeat the pair on a held-out
    source-domain corpus."""

    seed: int
    source: list[UtteranceRecord]
    adapted: list[UtteranceRecord]
    in_domain_source: list[UtteranceRecord]
    in_domain_adapted: list[UtteranceRecord]
    train_history: list[float]
    loss_trajectory: list[float]
    params_digest: str

    def mean(self, which: str, name: str) -> float:
        rows = getattr(self, which)
        return float(np.mean([getattr(r, name) for r in rows]))

    def delta(self, name: str) -> float:
        return self.mean("adapted", name) - self.mean("source", name)

    def in_domain_delta(self, name: str) -> float:
        return self.mean("in_domain_adapted", name) - self.mean("in_domain_source", name)

    @property
    def source_domain_bimodality(self) -> float:
        return self.mean("in_domain_source", "bimodality_m")

    @property
    def target_domain_bimodality(self) -> float:
        return self.mean("source", "bimodality_m")


def _record(uid, utt: Utterance, enhanced: AudioClip, rep, rtf: float) -> UtteranceRecord:
    loss = rep.pre_update_loss
    nan = float("nan")
    return UtteranceRecord(
        utterance_id=uid,
        si_sdr_in=si_sdr(utt.noisy, utt.clean),
        si_sdr_out=si_sdr(enhanced, utt.clean),
        ssnr_in=ssnr(utt.noisy, utt.clean),
        ssnr_out=ssnr(enhanced, utt.clean),
        l_w=loss.l_w if loss else nan,
        l_s=loss.l_s if loss else nan,
        total_loss=loss.total if loss else nan,
        neg_bin_count=rep.neg_bin_count,
        bimodality_m=rep.bimodality_m,
        bimodality_mp=rep.bimodality_mp,
        rtf=rtf,
    )


def evaluate(corpus: list[Utterance], net: MaskNet, adapt_cfg: AdaptConfig | None,
             stft_cfg: StftConfig = StftConfig()) -> list[UtteranceRecord]:
    """Run ``corpus`` through ``net``; adapt online when ``adapt_cfg`` is given.

    Without adaptation the pre-update loss and reference-mask statistics are
    still reported, so both runs carry the same fields.
    """
    if adapt_cfg is None:
        adapt_cfg, work = replace(AdaptConfig(), steps_per_utterance=0), net
    else:
        work = net
    state = OptimizerState.zeros(work.params.n_adaptable)
    rows = []
    for utt in corpus:
        enhanced, rep = adapt_utterance(utt.noisy, work, state, adapt_cfg, stft_cfg)
        rows.append(_record(utt.uid, utt, enhanced, rep, rep.wall_time / utt.noisy.duration))
    return rows


def mask_bimodality(corpus: list[Utterance], net: MaskNet, stft_cfg: StftConfig = StftConfig()) -> float:
    return float(np.mean([bimodality(enhance(u.noisy, net, stft_cfg)[1]) for u in corpus]))


def train_for_seed(spec: CorpusSpec, seed: int, bench: BenchConfig = BenchConfig()) -> tuple[MaskNet, list[float]]:
    train_spec = replace(spec, n_utterances=bench.train_utterances, seed=_derive(seed, 0))
    net = MaskNet.build(bench.stft.n_bins, hidden=bench.hidden, seed=_derive(seed, 1))
    history = train_source(generate_corpus(train_spec), net, replace(bench.train, seed=_derive(seed, 2)), bench.stft)
    return net, history


def _derive(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def run_seed(source_spec: CorpusSpec, target_spec: CorpusSpec, adapt_cfg: AdaptConfig, seed: int,
             bench: BenchConfig = BenchConfig(), net: MaskNet | None = None) -> SeedResult:
    history: list[float] = []
    if net is None:
        net, history = train_for_seed(source_spec, seed, bench)
    src_test = generate_corpus(replace(source_spec, n_utterances=bench.test_utterances, seed=_derive(seed, 3)))
    tgt_test = generate_corpus(replace(target_spec, n_utterances=bench.test_utterances, seed=_derive(seed, 4)))
    work = net.copy()
    adapted = evaluate(tgt_test, work, adapt_cfg, bench.stft)
    return SeedResult(
        seed=seed,
        source=evaluate(tgt_test, net, None, bench.stft),
        adapted=adapted,
        in_domain_source=evaluate(src_test, net, None, bench.stft),
        in_domain_adapted=evaluate(src_test, net.copy(), adapt_cfg, bench.stft),
        train_history=history,
        loss_trajectory=[r.total_loss for r in adapted],
        params_digest=hashlib.sha256(work.params.theta.tobytes()).hexdigest(),
    )


def run_benchmark(source_spec: CorpusSpec, target_spec: CorpusSpec, adapt_cfg: AdaptConfig = AdaptConfig(),
                  n_seeds: int = 10, bench: BenchConfig = BenchConfig()) -> list[SeedResult]:
    """Per seed: train on the source domain, evaluate unadapted and adapted on the target."""
    results = []
    for seed in range(n_seeds):
        res = run_seed(source_spec, target_spec, adapt_cfg, seed, bench)
        log.info("seed %d: dSI-SDR %+.3f dB, dbimodality %+.4f", seed, res.delta("si_sdr_out"), res.delta("bimodality_m"))
        results.append(res)
    return results


SUMMARY_METRICS = ("si_sdr_out", "ssnr_out", "bimodality_m", "bimodality_mp", "l_w", "l_s", "total_loss",
                   "neg_bin_count", "rtf")


def seed_rows(results: list[SeedResult]):
    """Per-seed means for each method plus the adapted-minus-source deltas."""
    from .reporting import SeedRow

    rows = []
    for r in results:
        src = {k: r.mean("source", k) for k in SUMMARY_METRICS}
        ada = {k: r.mean("adapted", k) for k in SUMMARY_METRICS}
        rows.append(SeedRow("Source", r.seed, src))
        rows.append(SeedRow("MPol", r.seed, ada))
        rows.append(SeedRow("Delta", r.seed, {
            "si_sdr": r.delta("si_sdr_out"),
            "ssnr": r.delta("ssnr_out"),
            "bimodality": r.delta("bimodality_m"),
        }))
        rows.append(SeedRow("InDomainDelta", r.seed, {
            "si_sdr": r.in_domain_delta("si_sdr_out"),
            "ssnr": r.in_domain_delta("ssnr_out"),
            "bimodality": r.in_domain_delta("bimodality_m"),
            "source_bimodality": r.source_domain_bimodality,
            "target_bimodality": r.target_domain_bimodality,
        }))
    return rows


def utterance_records(results: list[SeedResult]) -> list[UtteranceRecord]:
    """All per-utterance records, ids prefixed with seed and condition."""
    out = []
    for r in results:
        for cond in ("source", "adapted", "in_domain_source", "in_domain_adapted"):
            for rec in getattr(r, cond):
                out.append(replace(rec, utterance_id=f"s{r.seed:02d}/{cond}/{rec.utterance_id}"))
    return out
