import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpol.dsp import AudioClip, StftConfig, apply_mask, istft, n_frames, stft
from mpol.errors import ConfigError, ConfigMismatch, DataError, InputTooShort, ShapeMismatch

SR = 16000
CFG = StftConfig()


def clip(x, sr=SR):
    return AudioClip(np.asarray(x, dtype=float), sr)


def direct_dft(frame):
    n = frame.size
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    return (frame[None, :] * np.exp(-2j * np.pi * k * t / n)).sum(axis=1)


class TestAudioClip:
    def test_rejects_empty(self):
        with pytest.raises(DataError):
            clip([])

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            clip([0.0, np.nan])

    def test_rejects_bad_rate(self):
        with pytest.raises(DataError):
            clip([0.0], sr=0)

    def test_duration(self):
        assert clip(np.zeros(8000)).duration == 0.5


class TestStftConfig:
    def test_defaults(self):
        assert (CFG.fft_size, CFG.hop, CFG.window) == (512, 128, "hann")
        assert CFG.n_bins == 257

    def test_fft_power_of_two(self):
        with pytest.raises(ConfigError):
            StftConfig(fft_size=500)

    def test_hop_bounds(self):
        with pytest.raises(ConfigError):
            StftConfig(hop=1024)

    def test_non_cola_rejected(self):
        # hann without overlap does not sum to a constant
        with pytest.raises(ConfigError):
            StftConfig(fft_size=512, hop=512, window="hann")

    def test_unknown_window(self):
        with pytest.raises(ConfigError):
            StftConfig(window="kaiser")


class TestStft:
    def test_frame_count(self):
        assert n_frames(512, CFG) == 1
        assert n_frames(512 + 128, CFG) == 2
        # a partial final frame is zero-padded, not dropped
        assert n_frames(512 + 129, CFG) == 3
        spec = stft(clip(np.ones(1000)), CFG)
        assert spec.shape == (n_frames(1000, CFG), 257)

    def test_too_short(self):
        with pytest.raises(InputTooShort):
            stft(clip(np.zeros(511)), CFG)

    def test_zero_signal(self):
        spec = stft(clip(np.zeros(4096)), CFG)
        assert np.all(spec.magnitude == 0.0)

    @pytest.mark.parametrize("b", [3, 40, 128, 200])
    def test_bin_centred_sine_matches_direct_dft(self, b):
        f = SR * b / CFG.fft_size
        x = np.sin(2 * np.pi * f * np.arange(4096) / SR)
        spec = stft(clip(x), CFG)
        mag = spec.magnitude
        assert np.all(mag.argmax(axis=1) == b)
        # oracle: O(N^2) DFT of the first windowed frame
        oracle = np.abs(direct_dft(x[:512] * CFG.analysis_window()))
        assert abs(mag[0, b] - oracle[b]) <= 0.01 * oracle[b]
        # analytic gain of a periodic hann on a unit bin-centred sine is N/4
        assert oracle[b] == pytest.approx(CFG.fft_size / 4, rel=1e-9)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=3000), rng.normal(size=3000)
        sa, sb, sab = stft(clip(a)), stft(clip(b)), stft(clip(a + b))
        assert np.all(sab.magnitude <= sa.magnitude + sb.magnitude + 1e-9)

    def test_magnitude_nonnegative_phase_range(self):
        spec = stft(clip(np.random.default_rng(1).normal(size=5000)))
        assert np.all(spec.magnitude >= 0)
        assert np.all((spec.phase > -np.pi - 1e-12) & (spec.phase <= np.pi))


class TestIstft:
    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_interior(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=int(rng.integers(4 * 512, 20000)))
        y = istft(stft(clip(x), CFG), CFG).samples
        assert y.size == x.size
        assert np.max(np.abs(y - x)[256:-256]) <= 1e-6

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2048, 6000), st.integers(0, 2**31 - 1))
    def test_round_trip_property(self, n, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, size=n)
        y = istft(stft(clip(x))).samples
        assert np.max(np.abs(y - x)[256:-256]) <= 1e-6

    def test_other_cola_config(self):
        cfg = StftConfig(fft_size=256, hop=64, window="hamming")
        x = np.random.default_rng(3).normal(size=4000)
        y = istft(stft(clip(x), cfg), cfg).samples
        assert np.max(np.abs(y - x)[128:-128]) <= 1e-6

    def test_zero_magnitude(self):
        spec = stft(clip(np.random.default_rng(2).normal(size=3000)))
        zeroed = apply_mask(spec, np.zeros(spec.shape))
        assert np.all(istft(zeroed).samples == 0.0)

    def test_identity_mask(self):
        spec = stft(clip(np.random.default_rng(4).normal(size=3000)))
        a = istft(spec).samples
        b = istft(apply_mask(spec, np.ones(spec.shape))).samples
        assert np.array_equal(a, b)

    def test_config_mismatch(self):
        spec = stft(clip(np.zeros(3000)), CFG)
        with pytest.raises(ConfigMismatch):
            istft(spec, StftConfig(fft_size=256, hop=64))
        with pytest.raises(ConfigMismatch):
            istft(spec, StftConfig(fft_size=512, hop=256))

    def test_edges_bounded_under_modification(self):
        x = np.random.default_rng(5).normal(size=48000)
        spec = stft(clip(x))
        y = istft(apply_mask(spec, np.full(spec.shape, 0.5))).samples
        assert np.max(np.abs(y)) <= np.max(np.abs(x))


class TestApplyMask:
    def setup_method(self):
        self.spec = stft(clip(np.random.default_rng(7).normal(size=2000)))

    def test_ones(self):
        out = apply_mask(self.spec, np.ones(self.spec.shape))
        assert np.array_equal(out.magnitude, self.spec.magnitude)
        assert np.array_equal(out.phase, self.spec.phase)

    def test_zeros(self):
        assert np.all(apply_mask(self.spec, np.zeros(self.spec.shape)).magnitude == 0)

    def test_negative_clamped_and_counted(self):
        mag = np.full((2, 3), 2.0)
        mag[1, 2] = 0.0
        spec = type(self.spec)(mag, np.zeros((2, 3)), 128, 4, 8, SR)
        mask = np.array([[1.0, -0.5, 0.3], [-1.0, 0.5, -2.0]])
        out = apply_mask(spec, mask)
        assert out.magnitude[0, 1] == 0.0
        # negative entries over non-zero magnitude: (0,1) and (1,0); (1,2) sits on a zero bin
        assert out.clamped_bins == 2
        assert mask[0, 1] == -0.5  # the mask is never modified

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            apply_mask(self.spec, np.ones((1, 1)))

    def test_elementwise_permutation(self):
        rng = np.random.default_rng(8)
        mask = rng.uniform(-0.5, 1.5, size=self.spec.shape)
        perm = rng.permutation(mask.size)
        out = apply_mask(self.spec, mask).magnitude.ravel()[perm]
        spec_p = type(self.spec)(
            self.spec.magnitude.ravel()[perm].reshape(self.spec.shape),
            self.spec.phase, 128, 512, 2000, SR,
        )
        out_p = apply_mask(spec_p, mask.ravel()[perm].reshape(mask.shape)).magnitude.ravel()
        assert np.array_equal(out, out_p)

    def test_frame_energy_nonincreasing(self):
        mask = np.random.default_rng(9).uniform(0, 1, size=self.spec.shape)
        out = apply_mask(self.spec, mask).magnitude
        assert np.all((out**2).sum(axis=1) <= (self.spec.magnitude**2).sum(axis=1))
