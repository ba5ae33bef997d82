"""Frame-wise mask estimation network with a hand-written backward pass.

Parameters live in one flat float64 vector. Only the normalisation layers and
the output head are adaptable at test time; everything else is frozen and
must stay bit-identical to the snapshot taken at load time.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CacheMismatch, FormatError, IoError, ShapeMismatch

AFFINE, FEATURENORM, RELU = "affine", "featurenorm", "relu"
_KIND_CODES = {AFFINE: 1, FEATURENORM: 2, RELU: 3}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

MAGIC = b"MPOL"
FORMAT_VERSION = 1
DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    n_out: int
    n_in: int
    eps: float = DEFAULT_EPS

    @property
    def n_params(self) -> int:
        if self.kind == AFFINE:
            return self.n_out * self.n_in + self.n_out
        if self.kind == FEATURENORM:
            return 2 * self.n_out
        return 0


class ModelParams:
    """Current parameters plus the immutable source snapshot.

    ``generation`` increases on every in-place update so stale forward caches
    can be detected.
    """

    def __init__(self, theta: np.ndarray, adaptable: np.ndarray):
        theta = np.array(theta, dtype=np.float64)
        adaptable = np.asarray(adaptable, dtype=bool)
        if adaptable.shape != theta.shape:
            raise ShapeMismatch("adaptable mask does not match parameter vector")
        self.theta = theta
        self.theta0 = theta.copy()
        self.theta0.flags.writeable = False
        self.adaptable = adaptable
        self.adaptable.flags.writeable = False
        self.adaptable_index = np.flatnonzero(adaptable)
        self.generation = 0

    def __len__(self):
        return self.theta.size

    @property
    def n_adaptable(self) -> int:
        return self.adaptable_index.size

    def get_adaptable(self) -> np.ndarray:
        return self.theta[self.adaptable_index].copy()

    def set_adaptable(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.adaptable_index.shape:
            raise ShapeMismatch(f"expected {self.n_adaptable} adaptable values, got {values.shape}")
        self.theta[self.adaptable_index] = values
        self.generation += 1

    def set_all(self, theta: np.ndarray) -> None:
        """Overwrite every parameter (source training only)."""
        self.theta[:] = theta
        self.generation += 1

    def rebase(self) -> None:
        """Take a new source snapshot from the current parameters."""
        self.theta0 = self.theta.copy()
        self.theta0.flags.writeable = False
        self.generation += 1

    def frozen_intact(self) -> bool:
        frozen = ~self.adaptable
        return bool(np.array_equal(self.theta[frozen], self.theta0[frozen]))


@dataclass
class Gradients:
    """Gradient values at the parameter positions listed in ``index``."""

    values: np.ndarray
    index: np.ndarray

    def full(self, n: int) -> np.ndarray:
        g = np.zeros(n)
        g[self.index] = self.values
        return g

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass
class ForwardCache:
    net_id: int
    generation: int
    shape: tuple[int, int]
    inputs: list[np.ndarray] = field(default_factory=list)
    extras: list[tuple | None] = field(default_factory=list)


class MaskNet:
    def __init__(self, layers: list[LayerSpec], params: ModelParams | None = None):
        _check_layers(layers)
        self.layers = list(layers)
        self.slices: list[slice] = []
        offset = 0
        for spec in self.layers:
            self.slices.append(slice(offset, offset + spec.n_params))
            offset += spec.n_params
        self.n_params = offset
        if params is None:
            params = ModelParams(np.zeros(offset), self._default_adaptable())
        if len(params) != offset:
            raise ShapeMismatch(f"parameter vector has {len(params)} entries, layers need {offset}")
        self.params = params

    @classmethod
    def build(cls, n_bins: int, hidden=(256, 256), seed: int = 0, eps: float = DEFAULT_EPS,
              zero_head: bool = False) -> "MaskNet":
        """Stack of affine -> featurenorm -> ReLU blocks with a linear head."""
        layers = []
        width = n_bins
        for h in hidden:
            layers += [LayerSpec(AFFINE, h, width), LayerSpec(FEATURENORM, h, h, eps), LayerSpec(RELU, h, h)]
            width = h
        layers.append(LayerSpec(AFFINE, n_bins, width))
        net = cls(layers)
        rng = np.random.default_rng(seed)
        theta = np.zeros(net.n_params)
        for i, spec in enumerate(layers):
            sl = net.slices[i]
            if spec.kind == AFFINE:
                W = rng.normal(0.0, np.sqrt(2.0 / spec.n_in), size=(spec.n_out, spec.n_in))
                if zero_head and i == len(layers) - 1:
                    W[:] = 0.0
                theta[sl][: W.size] = W.ravel()
            elif spec.kind == FEATURENORM:
                theta[sl][: spec.n_out] = 1.0
        net.params = ModelParams(theta, net._default_adaptable())
        return net

    def copy(self) -> "MaskNet":
        """Independent network with the same weights and the same source snapshot."""
        params = ModelParams(self.params.theta0, self.params.adaptable.copy())
        params.theta[:] = self.params.theta
        return MaskNet(self.layers, params)

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    def _default_adaptable(self) -> np.ndarray:
        mask = np.zeros(self.n_params, dtype=bool)
        last = len(self.layers) - 1
        for i, spec in enumerate(self.layers):
            if spec.kind == FEATURENORM or i == last:
                mask[self.slices[i]] = True
        return mask

    def layer_params(self, i: int, theta: np.ndarray | None = None):
        spec = self.layers[i]
        p = (self.params.theta if theta is None else theta)[self.slices[i]]
        if spec.kind == AFFINE:
            k = spec.n_out * spec.n_in
            return p[:k].reshape(spec.n_out, spec.n_in), p[k:]
        if spec.kind == FEATURENORM:
            return p[: spec.n_out], p[spec.n_out :]
        return ()

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeMismatch(f"input shape {x.shape} incompatible with input_dim {self.input_dim}")
        cache = ForwardCache(id(self), self.params.generation, x.shape)
        h = x
        for i, spec in enumerate(self.layers):
            cache.inputs.append(h)
            if spec.kind == AFFINE:
                W, b = self.layer_params(i)
                h = h @ W.T + b
                cache.extras.append(None)
            elif spec.kind == FEATURENORM:
                g, beta = self.layer_params(i)
                mu = h.mean(axis=1, keepdims=True)
                inv_std = 1.0 / np.sqrt(h.var(axis=1, keepdims=True) + spec.eps)
                xhat = (h - mu) * inv_std
                cache.extras.append((xhat, inv_std))
                h = xhat * g + beta
            else:
                cache.extras.append(None)
                h = np.maximum(h, 0.0)
        return h, cache

    def backward(self, cache: ForwardCache, dL_dmask: np.ndarray, scope: str = "adaptable") -> Gradients:
        """Gradients of a scalar loss w.r.t. the parameters in ``scope``.

        ``scope`` is ``"adaptable"`` (test-time partition) or ``"all"``
        (source training).
        """
        if cache.net_id != id(self) or cache.generation != self.params.generation:
            raise CacheMismatch("forward cache is stale or belongs to another network")
        g = np.asarray(dL_dmask, dtype=np.float64)
        if g.shape != (cache.shape[0], self.output_dim):
            raise CacheMismatch(f"upstream gradient shape {g.shape} does not match cached forward")
        if scope == "adaptable":
            trainable = self.params.adaptable
        elif scope == "all":
            trainable = np.ones(self.n_params, dtype=bool)
        else:
            raise ValueError(f"unknown scope {scope!r}")

        full = np.zeros(self.n_params)
        lowest = min((i for i, sl in enumerate(self.slices) if trainable[sl].any()), default=len(self.layers))
        for i in range(len(self.layers) - 1, lowest - 1, -1):
            spec = self.layers[i]
            h_in = cache.inputs[i]
            sl = self.slices[i]
            need_input_grad = i > lowest
            need_param_grad = bool(trainable[sl].any())
            if spec.kind == AFFINE:
                W, _ = self.layer_params(i)
                k = spec.n_out * spec.n_in
                if need_param_grad:
                    full[sl][:k] = (g.T @ h_in).ravel()
                    full[sl][k:] = g.sum(axis=0)
                if need_input_grad:
                    g = g @ W
            elif spec.kind == FEATURENORM:
                gamma, _ = self.layer_params(i)
                xhat, inv_std = cache.extras[i]
                if need_param_grad:
                    full[sl][: spec.n_out] = (g * xhat).sum(axis=0)
                    full[sl][spec.n_out :] = g.sum(axis=0)
                if need_input_grad:
                    dxhat = g * gamma
                    g = inv_std * (
                        dxhat
                        - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
                    )
            else:
                if need_input_grad:
                    g = g * (h_in > 0)
        index = np.flatnonzero(trainable)
        return Gradients(full[index], index)


def forward(net: MaskNet, log_mag: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    return net.forward(log_mag)


def backward(net: MaskNet, cache: ForwardCache, dL_dmask: np.ndarray, scope: str = "adaptable") -> Gradients:
    return net.backward(cache, dL_dmask, scope)


def features(magnitude: np.ndarray) -> np.ndarray:
    return np.log1p(magnitude)


def _check_layers(layers: list[LayerSpec]) -> None:
    if not layers:
        raise ShapeMismatch("network has no layers")
    if layers[-1].kind != AFFINE:
        raise ShapeMismatch("final layer must be affine (linear output head)")
    for prev, cur in zip(layers, layers[1:]):
        if cur.n_in != prev.n_out:
            raise ShapeMismatch(f"layer input {cur.n_in} does not match previous output {prev.n_out}")
    for spec in layers:
        if spec.kind not in _KIND_CODES:
            raise FormatError(f"unknown layer kind {spec.kind!r}")
        if spec.kind != AFFINE and spec.n_in != spec.n_out:
            raise ShapeMismatch(f"{spec.kind} layer must preserve width")
        if spec.kind == FEATURENORM and not spec.eps > 0:
            raise ShapeMismatch("featurenorm epsilon must be positive")


# -- parameter files ---------------------------------------------------------
#
# "MPOL" | version u16 | layer count u16 | per layer: kind u8, dims u32 x2,
# payload f64 LE | CRC32 (u32) of everything before it.
# featurenorm payload is gamma, beta, eps; relu carries no payload.


def dumps_params(net: MaskNet) -> bytes:
    parts = [MAGIC, struct.pack("<HH", FORMAT_VERSION, len(net.layers))]
    for i, spec in enumerate(net.layers):
        parts.append(struct.pack("<BII", _KIND_CODES[spec.kind], spec.n_out, spec.n_in))
        payload = net.params.theta[net.slices[i]]
        if spec.kind == FEATURENORM:
            payload = np.append(payload, spec.eps)
        parts.append(payload.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads_params(blob: bytes, expected_bins: int | None = None) -> MaskNet:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise FormatError("not an MPOL parameter file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checksum mismatch (truncated or corrupted file)")
    version, count = struct.unpack_from("<HH", body, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    pos = 8
    layers, chunks = [], []
    for _ in range(count):
        if pos + 9 > len(body):
            raise FormatError("truncated layer header")
        code, n_out, n_in = struct.unpack_from("<BII", body, pos)
        pos += 9
        if code not in _CODE_KINDS:
            raise FormatError(f"unknown layer kind code {code}")
        kind = _CODE_KINDS[code]
        n_vals = LayerSpec(kind, n_out, n_in).n_params + (1 if kind == FEATURENORM else 0)
        end = pos + 8 * n_vals
        if end > len(body):
            raise FormatError("truncated layer payload")
        vals = np.frombuffer(body[pos:end], dtype="<f8").astype(np.float64)
        pos = end
        eps = DEFAULT_EPS
        if kind == FEATURENORM:
            vals, eps = vals[:-1], float(vals[-1])
        layers.append(LayerSpec(kind, n_out, n_in, eps))
        chunks.append(vals)
    if pos != len(body):
        raise FormatError("trailing bytes after last layer")
    net = MaskNet(layers)
    if expected_bins is not None and (net.input_dim != expected_bins or net.output_dim != expected_bins):
        raise ShapeMismatch(f"model expects {net.input_dim} bins, data has {expected_bins}")
    theta = np.concatenate(chunks) if chunks else np.zeros(0)
    net.params = ModelParams(theta, net._default_adaptable())
    return net


def save_params(net: MaskNet, path: str | Path) -> None:
    path = Path(path)
    blob = dumps_params(net)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_params(path: str | Path, expected_bins: int | None = None) -> MaskNet:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return loads_params(blob, expected_bins)
