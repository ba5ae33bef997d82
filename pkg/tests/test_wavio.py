import numpy as np
import pytest

from mpol.dsp import AudioClip
from mpol.errors import FormatError, IoError
from mpol.wavio import read_wav, write_wav


def test_pcm16_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-0.9, 0.9, size=1000)
    write_wav(tmp_path / "a.wav", AudioClip(x, 8000))
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 8000
    assert np.max(np.abs(back.samples - x)) <= 0.5 / 32768 + 1e-12


def test_pcm16_scaling(tmp_path):
    write_wav(tmp_path / "a.wav", AudioClip(np.array([0.5, -1.0, 0.0]), 16000))
    raw = read_wav(tmp_path / "a.wav").samples
    assert raw.tolist() == [0.5, -1.0, 0.0]


def test_float32_round_trip(tmp_path):
    x = np.random.default_rng(1).uniform(-1, 1, size=500)
    write_wav(tmp_path / "f.wav", AudioClip(x, 22050), fmt="float32")
    back = read_wav(tmp_path / "f.wav")
    assert np.array_equal(back.samples, x.astype(np.float32).astype(np.float64))


@pytest.mark.parametrize("fmt", ["pcm16", "float32"])
def test_saturation(tmp_path, fmt):
    write_wav(tmp_path / "s.wav", AudioClip(np.array([2.0, -3.0, 0.25]), 16000), fmt=fmt)
    back = read_wav(tmp_path / "s.wav").samples
    assert back[0] == pytest.approx(32767 / 32768 if fmt == "pcm16" else 1.0)
    assert back[1] == -1.0


def test_rejects_stereo(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "st.wav", 16000, np.zeros((10, 2), dtype=np.int16))
    with pytest.raises(FormatError):
        read_wav(tmp_path / "st.wav")


def test_garbage(tmp_path):
    (tmp_path / "g.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(FormatError):
        read_wav(tmp_path / "g.wav")


def test_missing(tmp_path):
    with pytest.raises(IoError):
        read_wav(tmp_path / "nope.wav")
