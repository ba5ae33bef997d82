import numpy as np
import pytest
from fastapi.testclient import TestClient

from mpol.adapter import AdaptConfig, enhance
from mpol.dsp import AudioClip
from mpol.errors import ConfigError
from mpol.model import MaskNet
from mpol.service import create_app


def clip_payload(seed=0, n=8000, **extra):
    x = 0.1 * np.random.default_rng(seed).normal(size=n)
    return {"samples": x.tolist(), "sample_rate": 16000, **extra}


@pytest.fixture
def net():
    return MaskNet.build(257, hidden=(16, 16), seed=0)


@pytest.fixture
def client(net):
    return TestClient(create_app(net, AdaptConfig(learning_rate=1e-2)))


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_status_defaults(client, net):
    body = client.get("/status").json()
    assert body["utterances_adapted"] == 0 and body["drift"] == 0.0
    assert body["n_adaptable"] == net.params.n_adaptable
    assert body["config"]["learning_rate"] == 1e-2 and body["config"]["fft_size"] == 512


def test_enhance_matches_library(client, net):
    payload = clip_payload()
    expected, _ = enhance(AudioClip(np.asarray(payload["samples"]), 16000), net.copy())
    body = client.post("/enhance", json=payload).json()
    assert np.allclose(body["audio"]["samples"], expected.samples, rtol=0, atol=1e-12)
    assert body["utterances_adapted"] == 1
    assert len(body["report"]["losses"]) == 1


def test_adaptation_persists_and_resets(client):
    client.post("/enhance", json=clip_payload(0))
    client.post("/enhance", json=clip_payload(1))
    st = client.get("/status").json()
    assert st["utterances_adapted"] == 2 and st["drift"] > 0
    st = client.post("/reset").json()
    assert st["utterances_adapted"] == 0 and st["drift"] == 0.0


def test_no_adapt(client):
    body = client.post("/enhance", json=clip_payload(adapt=False)).json()
    assert body["utterances_adapted"] == 0 and body["report"]["losses"] == []
    assert client.get("/status").json()["drift"] == 0.0


def test_too_short_is_data_error(client):
    r = client.post("/enhance", json=clip_payload(n=100))
    assert r.status_code == 422
    assert r.json()["exit_code"] == 3 and r.json()["error"] == "InputTooShort"


def test_validation(client):
    assert client.post("/enhance", json={"samples": [], "sample_rate": 16000}).status_code == 422
    assert client.post("/enhance", json={"samples": [0.0], "sample_rate": 0}).status_code == 422


def test_histogram(client):
    body = client.post("/histogram", json=clip_payload()).json()
    assert len(body["bin_edges"]) == 11 and len(body["counts"]) == 10
    n_frames = 1 + int(np.ceil((8000 - 512) / 128))
    assert sum(body["counts"]) + body["underflow"] + body["overflow"] == n_frames * 257


def test_histogram_bad_edges(client):
    r = client.post("/histogram", json=clip_payload(edges=[1.0, 0.0]))
    assert r.status_code == 400 and r.json()["exit_code"] == 2


def test_bin_mismatch():
    with pytest.raises(ConfigError):
        create_app(MaskNet.build(129, hidden=(8,)))
