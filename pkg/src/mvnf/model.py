"""Residual sinusoidal coordinate network (the compressed artifact).

Layout, with ``W`` the hidden width and ``w0`` the sine frequency::

    h   = sin(w0 * (W_in x + b_in))
    h   = a * (h + sin(w0 * (W2 sin(w0 * (W1 h + b1)) + b2)))   # once per block
    out = W_out h + b_out                                         # linear

The skip scale ``a`` defaults to 1/sqrt(2). A sine of unit-variance input has
variance 1/2, so this keeps the residual stream at the scale the SIREN
initialization assumes at any depth. With ``a = 1`` the stream variance grows
linearly with the block count and deep models start as high-frequency noise.

Parameters live in a flat list in declaration order (input W, b; each block
W1, b1, W2, b2; output W, b), which is also the on-disk order.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .field import MultiField, Normalizer

SKIP_SCALE = math.sqrt(0.5)
MAGIC = b"MVNF"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class NumericalError(ArithmeticError):
    """Non-finite loss or parameters."""


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int
    out_dim: int
    hidden_width: int = 120
    num_res_blocks: int = 10
    omega0: float = 30.0
    init_seed: int = 0
    skip_scale: float = SKIP_SCALE

    def __post_init__(self):
        if self.in_dim not in (2, 3):
            raise ValueError(f"in_dim must be 2 or 3, got {self.in_dim}")
        if self.out_dim < 1:
            raise ValueError("out_dim must be >= 1")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.num_res_blocks < 1:
            raise ValueError("num_res_blocks must be >= 1")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be > 0")
        if not 0 < self.skip_scale <= 1:
            raise ValueError("skip_scale must be in (0, 1]")


def param_shapes(config: ModelConfig) -> list[tuple[int, ...]]:
    W, d, v = config.hidden_width, config.in_dim, config.out_dim
    shapes = [(W, d), (W,)]
    for _ in range(config.num_res_blocks):
        shapes += [(W, W), (W,), (W, W), (W,)]
    shapes += [(v, W), (v,)]
    return shapes


def param_names(config: ModelConfig) -> list[str]:
    names = ["input.weight", "input.bias"]
    for k in range(config.num_res_blocks):
        names += [f"block{k}.w1", f"block{k}.b1", f"block{k}.w2", f"block{k}.b2"]
    names += ["output.weight", "output.bias"]
    return names


def param_count(config: ModelConfig) -> int:
    """Closed form ``(d W + W) + B 2 (W^2 + W) + (W v + v)``."""
    W, B = config.hidden_width, config.num_res_blocks
    return (config.in_dim * W + W) + B * 2 * (W * W + W) + (W * config.out_dim + config.out_dim)


class ResidualSirenModel:
    def __init__(self, config: ModelConfig, params: list[np.ndarray],
                 normalizer: Normalizer | None = None):
        shapes = param_shapes(config)
        if len(params) != len(shapes):
            raise ValueError(f"expected {len(shapes)} tensors, got {len(params)}")
        for p, s in zip(params, shapes):
            if p.shape != s:
                raise ValueError(f"tensor shape {p.shape} != expected {s}")
        self.config = config
        self.params = params
        self.normalizer = normalizer

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    @property
    def dtype(self):
        return self.params[0].dtype

    def astype(self, dtype) -> "ResidualSirenModel":
        return ResidualSirenModel(self.config, [p.astype(dtype) for p in self.params],
                                  self.normalizer)

    def copy(self) -> "ResidualSirenModel":
        return ResidualSirenModel(self.config, [p.copy() for p in self.params],
                                  self.normalizer)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p, dtype="<f4").tobytes())
        return h.hexdigest()

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params)

    def blocks(self):
        """Iterate ``(W1, b1, W2, b2)`` per residual block."""
        p = self.params
        for k in range(self.config.num_res_blocks):
            yield p[2 + 4 * k: 6 + 4 * k]

    def __repr__(self):
        c = self.config
        return (f"ResidualSirenModel(d={c.in_dim}, v={c.out_dim}, W={c.hidden_width}, "
                f"B={c.num_res_blocks}, P={self.num_params})")


def init_model(config: ModelConfig, normalizer: Normalizer | None = None
               ) -> ResidualSirenModel:
    """SIREN initialization, deterministic in ``config.init_seed``.

    Input layer ~ U(-1/d, 1/d); block layers ~ U(-c/w0, c/w0) with
    c = sqrt(6/W); output layer ~ U(-c, c); all biases zero.
    """
    rng = np.random.default_rng(config.init_seed)
    W, d = config.hidden_width, config.in_dim
    c = math.sqrt(6.0 / W)
    hidden = c / config.omega0

    def uniform(bound, shape):
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)

    params = [uniform(1.0 / d, (W, d)), np.zeros(W, np.float32)]
    for _ in range(config.num_res_blocks):
        params += [uniform(hidden, (W, W)), np.zeros(W, np.float32),
                   uniform(hidden, (W, W)), np.zeros(W, np.float32)]
    params += [uniform(c, (config.out_dim, W)), np.zeros(config.out_dim, np.float32)]
    return ResidualSirenModel(config, params, normalizer)


# ---------------------------------------------------------------- evaluation


def _sine_layer(h, weight, bias, omega):
    z = h @ weight.T
    z += bias
    z *= omega
    return z, np.sin(z)


def _forward_cached(model: ResidualSirenModel, x: np.ndarray):
    omega = model.dtype.type(model.config.omega0)
    a = model.dtype.type(model.config.skip_scale)
    p = model.params
    z0, h = _sine_layer(x, p[0], p[1], omega)
    cache = []
    for w1, b1, w2, b2 in model.blocks():
        z1, u = _sine_layer(h, w1, b1, omega)
        z2, s = _sine_layer(u, w2, b2, omega)
        cache.append((h, z1, u, z2))
        h = (h + s) * a
    y = h @ p[-2].T
    y += p[-1]
    return y, (x, z0, cache, h)


def forward(model: ResidualSirenModel, coords: np.ndarray,
            batch_size: int | None = None) -> np.ndarray:
    """Evaluate the network on ``coords`` of shape ``(n, d)``.

    Computation runs in the model's dtype. ``batch_size`` only bounds memory;
    rows are independent so the result does not depend on it.
    """
    x = np.asarray(coords, dtype=model.dtype)
    if x.ndim != 2 or x.shape[1] != model.config.in_dim:
        raise ValueError(f"coords must have shape (n, {model.config.in_dim})")
    if batch_size is None or len(x) <= batch_size:
        return _forward_cached(model, x)[0]
    out = np.empty((len(x), model.config.out_dim), dtype=model.dtype)
    for start in range(0, len(x), batch_size):
        out[start:start + batch_size] = _forward_cached(model, x[start:start + batch_size])[0]
    return out


def backward(model: ResidualSirenModel, coords: np.ndarray, targets: np.ndarray):
    """Mean squared error over batch and outputs, and its exact gradient.

    Returns ``(loss, grads)`` with ``grads`` aligned to ``model.params``.
    """
    dtype = model.dtype
    x = np.asarray(coords, dtype=dtype)
    t = np.asarray(targets, dtype=dtype)
    if len(x) != len(t):
        raise ValueError("coords and targets differ in batch length")
    y, (x, z0, cache, h_last) = _forward_cached(model, x)
    diff = y - t
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    if not math.isfinite(loss):
        raise NumericalError("non-finite loss")

    omega = dtype.type(model.config.omega0)
    a = dtype.type(model.config.skip_scale)
    p = model.params
    grads: list[np.ndarray] = [None] * len(p)  # type: ignore[list-item]
    dy = diff * dtype.type(2.0 / diff.size)
    grads[-2] = dy.T @ h_last
    grads[-1] = dy.sum(axis=0)
    dh = dy @ p[-2]

    blocks = list(model.blocks())
    for k in reversed(range(len(blocks))):
        w1, _, w2, _ = blocks[k]
        h_in, z1, u, z2 = cache[k]
        dh = dh * a
        g2 = dh * np.cos(z2)
        g2 *= omega
        grads[4 + 4 * k] = g2.T @ u
        grads[5 + 4 * k] = g2.sum(axis=0)
        g1 = g2 @ w2
        g1 *= np.cos(z1)
        g1 *= omega
        grads[2 + 4 * k] = g1.T @ h_in
        grads[3 + 4 * k] = g1.sum(axis=0)
        dh = dh + g1 @ w1

    g0 = dh * np.cos(z0)
    g0 *= omega
    grads[0] = g0.T @ x
    grads[1] = g0.sum(axis=0)
    return loss, grads


def loss(model: ResidualSirenModel, coords: np.ndarray, targets: np.ndarray) -> float:
    y = forward(model, coords)
    diff = y - np.asarray(targets, dtype=model.dtype)
    return float(np.mean(np.square(diff, dtype=np.float64)))


def reconstruct(model: ResidualSirenModel, batch_size: int = 65536) -> MultiField:
    """Evaluate every grid point, clamp to [-1, 1] and map back to raw units."""
    norm = model.normalizer
    if norm is None:
        raise ModelFormatError("model carries no normalizer; cannot reconstruct")
    coords = norm.grid_coords().astype(model.dtype)
    pred = forward(model, coords, batch_size=batch_size)
    np.clip(pred, -1.0, 1.0, out=pred)
    raw = norm.inverse(pred).astype(np.float32)
    return MultiField.from_arrays(
        {name: raw[:, i] for i, name in enumerate(norm.names)}, norm.shape)


# ------------------------------------------------------------- serialization


def _header(model: ResidualSirenModel) -> bytes:
    header = {"config": asdict(model.config),
              "normalizer": None if model.normalizer is None else model.normalizer.to_dict()}
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def to_bytes(model: ResidualSirenModel) -> bytes:
    header = _header(model)
    payload = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in model.params)
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + payload


def from_bytes(blob: bytes) -> ResidualSirenModel:
    if len(blob) < _PREFIX.size:
        raise ModelFormatError("corrupt header: file too short")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ModelFormatError(f"corrupt header: bad magic {magic!r}")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise ModelFormatError("corrupt header: truncated JSON header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
        config = ModelConfig(**header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"corrupt header: {exc}") from exc
    norm = header.get("normalizer")
    normalizer = None if norm is None else Normalizer.from_dict(norm)

    payload = memoryview(blob)[start + hlen:]
    n = param_count(config)
    if len(payload) != 4 * n:
        raise ModelFormatError(
            f"payload length mismatch: {len(payload)} bytes, expected {4 * n}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    params, offset = [], 0
    for shape in param_shapes(config):
        size = math.prod(shape)
        params.append(flat[offset:offset + size].reshape(shape).copy())
        offset += size
    return ResidualSirenModel(config, params, normalizer)


def save_model(model: ResidualSirenModel, path: str | os.PathLike) -> int:
    blob = to_bytes(model)
    Path(path).write_bytes(blob)
    return len(blob)


def load_model(path: str | os.PathLike) -> ResidualSirenModel:
    return from_bytes(Path(path).read_bytes())


# ------------------------------------------------------------------- storage


def raw_bytes(field: MultiField) -> int:
    return 4 * field.grid.size * field.num_vars


def compression_ratio(model_bytes: int, field: MultiField | int) -> float:
    """Raw float32 dataset size over artifact size.

    ``field`` may be a :class:`MultiField` or a raw byte count, which allows
    accounting for datasets too large to hold in memory.
    """
    if model_bytes <= 0:
        raise ValueError("model_bytes must be positive")
    raw = field if isinstance(field, (int, np.integer)) else raw_bytes(field)
    return raw / model_bytes


def format_ratio(ratio: float) -> str:
    return f"{ratio:.2f}:1"
