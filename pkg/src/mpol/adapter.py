"""Online test-time adaptation loop.

Per utterance: infer with the current weights, build the reference mask from
the enhanced magnitude, take AdamW steps on the MPol loss for the adaptable
parameters and pull them back toward the source weights.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dsp import AudioClip, StftConfig, apply_mask, istft, stft
from .errors import ConfigError, NonFiniteGradient, ShapeMismatch
from .loss import SHELF_REDUCTIONS, LossReport, mpol_loss
from .metrics import bimodality
from .model import Gradients, MaskNet, ModelParams, features
from .reference import estimate_noise_floor, reference_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptConfig:
    lam: float = 0.1
    beta: float = 0.8
    k: int = 32
    learning_rate: float = 5e-4
    steps_per_utterance: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    shelf_reduction: str = "mean"

    def __post_init__(self):
        if self.shelf_reduction not in SHELF_REDUCTIONS:
            raise ConfigError(f"shelf_reduction must be one of {SHELF_REDUCTIONS}, got {self.shelf_reduction!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if not self.learning_rate >= 0.0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.steps_per_utterance < 0:
            raise ConfigError("steps_per_utterance must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("AdamW moment decay rates must be in [0, 1)")
        if not self.epsilon > 0.0 or self.weight_decay < 0.0:
            raise ConfigError("AdamW epsilon must be positive and weight_decay non-negative")


# config-file key -> (section, field)
_CONFIG_KEYS = {
    "lambda": ("adapt", "lam"),
    "beta": ("adapt", "beta"),
    "k": ("adapt", "k"),
    "learning_rate": ("adapt", "learning_rate"),
    "steps_per_utterance": ("adapt", "steps_per_utterance"),
    "adamw.beta1": ("adapt", "beta1"),
    "adamw.beta2": ("adapt", "beta2"),
    "adamw.epsilon": ("adapt", "epsilon"),
    "adamw.weight_decay": ("adapt", "weight_decay"),
    "shelf_reduction": ("adapt", "shelf_reduction"),
    "stft.fft_size": ("stft", "fft_size"),
    "stft.hop": ("stft", "hop"),
    "stft.window": ("stft", "window"),
}


def parse_config(text: str) -> tuple[AdaptConfig, StftConfig]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, dict] = {"adapt": {}, "stft": {}}
    types = {("adapt", f.name): f.type for f in fields(AdaptConfig)}
    types.update({("stft", f.name): f.type for f in fields(StftConfig)})
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep or not key or not val:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, name = _CONFIG_KEYS[key]
        kind = types[(section, name)]
        try:
            values[section][name] = int(val) if kind == "int" else float(val) if kind == "float" else val
        except ValueError:
            raise ConfigError(f"line {lineno}: bad {kind} value {val!r} for {key}") from None
    return AdaptConfig(**values["adapt"]), StftConfig(**values["stft"])


def load_config(path: str | Path | None) -> tuple[AdaptConfig, StftConfig]:
    if path is None:
        return AdaptConfig(), StftConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_config(cfg: AdaptConfig, stft_cfg: StftConfig) -> str:
    src = {"adapt": asdict(cfg), "stft": asdict(stft_cfg)}
    return "".join(f"{key} = {src[sec][name]}\n" for key, (sec, name) in _CONFIG_KEYS.items())


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.m.copy(), self.v.copy(), self.t)


def adamw_step(params: ModelParams, grads: Gradients, state: OptimizerState, cfg: AdaptConfig) -> None:
    """One decoupled-weight-decay Adam update of the adaptable parameters, in place."""
    if not np.array_equal(grads.index, params.adaptable_index):
        raise ShapeMismatch("gradients are not aligned with the adaptable parameters")
    if not grads.is_finite():
        raise NonFiniteGradient("non-finite gradient; step skipped")
    g = grads.values
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    lr = cfg.learning_rate
    theta = params.get_adaptable()
    theta = theta * (1.0 - lr * cfg.weight_decay) - lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    params.set_adaptable(theta)
    state.m, state.v, state.t = m, v, t


def ensemble_weights(params: ModelParams, beta: float) -> None:
    """Pull adaptable parameters toward the source snapshot: beta*theta + (1-beta)*theta0."""
    idx = params.adaptable_index
    params.set_adaptable(beta * params.theta[idx] + (1.0 - beta) * params.theta0[idx])


@dataclass
class UtteranceReport:
    losses: list[LossReport] = field(default_factory=list)
    neg_bin_count: int = 0
    bimodality_m: float = float("nan")
    bimodality_mp: float = float("nan")
    wall_time: float = 0.0
    skipped: bool = False
    error: str | None = None

    @property
    def pre_update_loss(self) -> LossReport | None:
        return self.losses[0] if self.losses else None


def _safe_bimodality(m: np.ndarray) -> float:
    try:
        return bimodality(m)
    except Exception:
        return float("nan")


def enhance(clip: AudioClip, net: MaskNet, stft_cfg: StftConfig = StftConfig()) -> tuple[AudioClip, np.ndarray]:
    """Unadapted inference. Returns the enhanced clip and the raw mask."""
    spec = stft(clip, stft_cfg)
    mask, _ = net.forward(features(spec.magnitude))
    return istft(apply_mask(spec, mask), stft_cfg), mask


def adapt_utterance(
    clip: AudioClip,
    net: MaskNet,
    state: OptimizerState,
    cfg: AdaptConfig = AdaptConfig(),
    stft_cfg: StftConfig = StftConfig(),
    diagnostics: bool = True,
) -> tuple[AudioClip, UtteranceReport]:
    """Enhance ``clip`` with the current weights, then adapt on it.

    The returned audio comes from the first (pre-update) forward pass. If any
    step fails, parameters and optimizer state are rolled back to their
    pre-utterance values and the report is flagged. ``wall_time`` covers
    enhancement and adaptation; the bimodality diagnostics (skipped when
    ``diagnostics`` is false) are computed after the clock stops.
    """
    start = time.perf_counter()
    spec = stft(clip, stft_cfg)
    x = features(spec.magnitude)
    mask, cache = net.forward(x)
    enhanced_spec = apply_mask(spec, mask)
    enhanced = istft(enhanced_spec, stft_cfg)
    floor = estimate_noise_floor(spec.magnitude, cfg.k)

    report = UtteranceReport(neg_bin_count=enhanced_spec.clamped_bins)
    m_p = reference_mask(enhanced_spec.magnitude, floor)
    first_mask, first_m_p = mask, m_p
    loss, dL_dm = mpol_loss(mask, m_p, cfg.lam, cfg.shelf_reduction)
    report.losses.append(loss)

    params = net.params
    saved_theta, saved_state = params.get_adaptable(), state.copy()
    try:
        for step in range(cfg.steps_per_utterance):
            if step > 0:
                mask, cache = net.forward(x)
                m_p = reference_mask(apply_mask(spec, mask).magnitude, floor)
                loss, dL_dm = mpol_loss(mask, m_p, cfg.lam, cfg.shelf_reduction)
                report.losses.append(loss)
            grads = net.backward(cache, dL_dm)
            adamw_step(params, grads, state, cfg)
            ensemble_weights(params, cfg.beta)
    except NonFiniteGradient as exc:
        _rollback(params, saved_theta, state, saved_state)
        report.skipped = True
        report.error = str(exc)
        log.warning("adaptation skipped for utterance: %s", exc)
    except Exception:
        _rollback(params, saved_theta, state, saved_state)
        raise
    report.wall_time = time.perf_counter() - start
    if diagnostics:
        report.bimodality_m = _safe_bimodality(first_mask)
        report.bimodality_mp = _safe_bimodality(first_m_p)
    return enhanced, report


def _rollback(params: ModelParams, theta: np.ndarray, state: OptimizerState, saved: OptimizerState) -> None:
    params.set_adaptable(theta)
    state.m, state.v, state.t = saved.m, saved.v, saved.t


class AdaptationSession:
    """Sequential adaptation state over a stream of utterances."""

    def __init__(self, net: MaskNet, cfg: AdaptConfig = AdaptConfig(), stft_cfg: StftConfig = StftConfig()):
        self.net = net
        self.cfg = cfg
        self.stft_cfg = stft_cfg
        self.state = OptimizerState.zeros(net.params.n_adaptable)
        self.utterances = 0

    def process(self, clip: AudioClip, adapt: bool = True) -> tuple[AudioClip, UtteranceReport]:
        if not adapt:
            start = time.perf_counter()
            out, mask = enhance(clip, self.net, self.stft_cfg)
            elapsed = time.perf_counter() - start
            return out, UtteranceReport(bimodality_m=_safe_bimodality(mask), wall_time=elapsed)
        out, rep = adapt_utterance(clip, self.net, self.state, self.cfg, self.stft_cfg)
        self.utterances += 1
        return out, rep

    def reset(self) -> None:
        self.net.params.set_adaptable(self.net.params.theta0[self.net.params.adaptable_index])
        self.state = OptimizerState.zeros(self.net.params.n_adaptable)
        self.utterances = 0


def measure_rtf(corpus: list[AudioClip], net: MaskNet, cfg: AdaptConfig = AdaptConfig(),
                stft_cfg: StftConfig = StftConfig()) -> dict[str, float]:
    """Real-time factor (processing time / audio duration) with adaptation off and on.

    The adaptation-on pass runs on a copy of ``net``; the caller's weights are
    not modified.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    duration = sum(c.duration for c in corpus)
    start = time.perf_counter()
    for clip in corpus:
        enhance(clip, net, stft_cfg)
    off = time.perf_counter() - start

    work = net.copy()
    state = OptimizerState.zeros(work.params.n_adaptable)
    start = time.perf_counter()
    for clip in corpus:
        adapt_utterance(clip, work, state, cfg, stft_cfg, diagnostics=False)
    on = time.perf_counter() - start
    return {"off": off / duration, "on": on / duration}
