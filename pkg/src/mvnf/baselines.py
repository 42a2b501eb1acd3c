"""Reference reduction methods: LERP resampling and block Gaussian summaries."""
from __future__ import annotations

import itertools
import json
import math
import os
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .field import GridSpec, MultiField

# ---------------------------------------------------------------------- LERP


def _resample_axis(arr: np.ndarray, axis: int, positions: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``arr`` along ``axis`` at fractional indices."""
    n = arr.shape[axis]
    lo = np.clip(np.floor(positions).astype(np.int64), 0, n - 2)
    frac = positions - lo
    shape = [1] * arr.ndim
    shape[axis] = len(positions)
    frac = frac.reshape(shape)
    a = np.take(arr, lo, axis=axis)
    b = np.take(arr, lo + 1, axis=axis)
    return a + (b - a) * frac


def _factors(factor, dims: int) -> tuple[int, ...]:
    if isinstance(factor, (int, np.integer)):
        factor = (int(factor),) * dims
    factor = tuple(int(f) for f in factor)
    if len(factor) != dims:
        raise ValueError(f"need {dims} factors, got {factor}")
    if any(f < 1 for f in factor):
        raise ValueError(f"factors must be >= 1, got {factor}")
    return factor


def lerp_shape(shape: Sequence[int], factor) -> tuple[int, ...]:
    factor = _factors(factor, len(shape))
    reduced = tuple(math.ceil(n / f) for n, f in zip(shape, factor))
    if any(m < 2 for m in reduced):
        raise ValueError(f"factor {factor} too large for shape {tuple(shape)}")
    return reduced


def lerp_reduce(field: MultiField, factor) -> MultiField:
    """Linearly resample onto ``ceil(shape / factor)`` points per axis.

    Sample positions form a uniform lattice that includes both endpoints.
    """
    shape = field.grid.shape
    reduced = lerp_shape(shape, factor)
    out = {}
    for name in field.names:
        arr = field.volume(name).astype(np.float64)
        for axis, (n, m) in enumerate(zip(shape, reduced)):
            arr = _resample_axis(arr, axis, np.arange(m) * ((n - 1) / (m - 1)))
        out[name] = arr.astype(np.float32)
    return MultiField.from_arrays(out, reduced)


def lerp_expand(reduced: MultiField, shape: Sequence[int]) -> MultiField:
    out = {}
    for name in reduced.names:
        arr = reduced.volume(name).astype(np.float64)
        for axis, (m, n) in enumerate(zip(reduced.grid.shape, shape)):
            arr = _resample_axis(arr, axis, np.arange(n) * ((m - 1) / (n - 1)))
        out[name] = arr.astype(np.float32)
    return MultiField.from_arrays(out, tuple(shape))


def lerp_reduce_expand(field: MultiField, factor) -> MultiField:
    """Downsample by ``factor`` then upsample back, both by linear interpolation."""
    return lerp_expand(lerp_reduce(field, factor), field.grid.shape)


def lerp_storage_bytes(shape: Sequence[int], num_vars: int, factor) -> int:
    return 4 * math.prod(lerp_shape(shape, factor)) * num_vars


def lerp_factor_for_budget(shape: Sequence[int], num_vars: int, budget_bytes: int) -> int:
    """Uniform factor whose reduced storage is closest to ``budget_bytes``
    on a log scale."""
    best, best_gap = 1, math.inf
    for f in range(1, max(shape)):
        try:
            size = lerp_storage_bytes(shape, num_vars, f)
        except ValueError:
            break
        gap = abs(math.log(size / budget_bytes))
        if gap < best_gap:
            best, best_gap = f, gap
    return best


# -------------------------------------------------------------------- Copula

_COPULA_MAGIC = b"MVCS"
_COPULA_PREFIX = struct.Struct("<4sII")


@dataclass
class CopulaSummary:
    """Per-block Gaussian marginals plus pairwise Pearson correlations.

    ``means``/``stds`` have shape ``(n_blocks, v)``; ``corr`` holds the strict
    upper triangle of each block's correlation matrix, shape
    ``(n_blocks, v (v - 1) / 2)``, in ``np.triu_indices(v, 1)`` order.
    Blocks are enumerated in row-major order over the block tiling.
    """

    shape: tuple[int, ...]
    block_shape: tuple[int, ...]
    names: tuple[str, ...]
    means: np.ndarray
    stds: np.ndarray
    corr: np.ndarray

    @property
    def tiling(self) -> tuple[int, ...]:
        return tuple(math.ceil(n / b) for n, b in zip(self.shape, self.block_shape))

    @property
    def num_blocks(self) -> int:
        return math.prod(self.tiling)

    def header_bytes(self) -> bytes:
        header = {"shape": list(self.shape), "block_shape": list(self.block_shape),
                  "names": list(self.names)}
        return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def payload_bytes(self) -> int:
        v = len(self.names)
        return self.num_blocks * (2 * v + v * (v - 1) // 2) * 4

    def storage_bytes(self) -> int:
        return _COPULA_PREFIX.size + len(self.header_bytes()) + self.payload_bytes()

    def corr_matrix(self, block: int) -> np.ndarray:
        v = len(self.names)
        mat = np.eye(v)
        iu = np.triu_indices(v, 1)
        mat[iu] = self.corr[block]
        mat.T[iu] = self.corr[block]
        return mat

    def save(self, path: str | os.PathLike) -> int:
        header = self.header_bytes()
        payload = np.concatenate([self.means, self.stds, self.corr], axis=1)
        blob = (_COPULA_PREFIX.pack(_COPULA_MAGIC, 1, len(header)) + header
                + payload.astype("<f4").tobytes())
        Path(path).write_bytes(blob)
        return len(blob)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CopulaSummary":
        blob = Path(path).read_bytes()
        magic, _version, hlen = _COPULA_PREFIX.unpack_from(blob)
        if magic != _COPULA_MAGIC:
            raise ValueError(f"not a copula summary: bad magic {magic!r}")
        start = _COPULA_PREFIX.size
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
        shape, block = tuple(header["shape"]), tuple(header["block_shape"])
        names = tuple(header["names"])
        v = len(names)
        width = 2 * v + v * (v - 1) // 2
        flat = np.frombuffer(blob[start + hlen:], dtype="<f4").astype(np.float32)
        n_blocks = math.prod(math.ceil(n / b) for n, b in zip(shape, block))
        if flat.size != n_blocks * width:
            raise ValueError("payload length mismatch")
        table = flat.reshape(n_blocks, width)
        return cls(shape, block, names, table[:, :v].copy(), table[:, v:2 * v].copy(),
                   table[:, 2 * v:].copy())


def _block_slices(shape, block_shape):
    ranges = [range(0, n, b) for n, b in zip(shape, block_shape)]
    for starts in itertools.product(*ranges):
        yield tuple(slice(s, min(s + b, n)) for s, b, n in zip(starts, block_shape, shape))


def _pearson(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Correlation of rows of ``x``; rows with zero spread correlate as 0."""
    centered = x - mean[:, None]
    cov = centered @ centered.T / x.shape[1]
    denom = np.outer(std, std)
    ok = denom > 0
    out = np.zeros_like(cov)
    out[ok] = cov[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def copula_summarize(field: MultiField, block_shape: Sequence[int]) -> CopulaSummary:
    shape = field.grid.shape
    block_shape = tuple(int(b) for b in block_shape)
    if len(block_shape) != len(shape) or any(b < 1 for b in block_shape):
        raise ValueError(f"bad block shape {block_shape} for grid {shape}")
    v = field.num_vars
    vols = field.data.reshape((v,) + shape)
    iu = np.triu_indices(v, 1)
    means, stds, corrs = [], [], []
    for sl in _block_slices(shape, block_shape):
        x = vols[(slice(None),) + sl].reshape(v, -1).astype(np.float64)
        mean = x.mean(axis=1)
        std = np.sqrt(np.mean((x - mean[:, None]) ** 2, axis=1))
        means.append(mean)
        stds.append(std)
        corrs.append(_pearson(x, mean, std)[iu])
    return CopulaSummary(
        shape, block_shape, tuple(field.names),
        np.asarray(means, dtype=np.float32), np.asarray(stds, dtype=np.float32),
        np.asarray(corrs, dtype=np.float32).reshape(len(means), len(iu[0])),
    )


def _sqrt_psd(mat: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -tol:
        warnings.warn(f"correlation matrix not PSD (min eigenvalue {vals.min():.3g}); clipping",
                      RuntimeWarning, stacklevel=3)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def copula_reconstruct(summary: CopulaSummary, target_grid: GridSpec | None = None,
                       seed: int = 0, mode: str = "sample") -> MultiField:
    """Rebuild a full-resolution field from block summaries.

    ``mode="sample"`` draws every point from the block's correlated Gaussian
    (block ``k`` uses the generator seeded with ``(seed, k)``);
    ``mode="mean"`` writes the block means.
    """
    if mode not in ("sample", "mean"):
        raise ValueError(f"unknown mode {mode!r}")
    shape = tuple(summary.shape) if target_grid is None else target_grid.shape
    if tuple(shape) != tuple(summary.shape):
        raise ValueError(f"summary tiles {summary.shape}, not {shape}")
    v = len(summary.names)
    out = np.empty((v,) + tuple(shape), dtype=np.float64)
    for k, sl in enumerate(_block_slices(shape, summary.block_shape)):
        n = math.prod(s.stop - s.start for s in sl)
        mean = summary.means[k].astype(np.float64)
        std = summary.stds[k].astype(np.float64)
        if mode == "mean" or not std.any():
            vals = np.repeat(mean[:, None], n, axis=1)
        else:
            root = _sqrt_psd(summary.corr_matrix(k).astype(np.float64))
            z = root @ np.random.default_rng([seed, k]).standard_normal((v, n))
            vals = mean[:, None] + std[:, None] * z
        block_shape = tuple(s.stop - s.start for s in sl)
        out[(slice(None),) + sl] = vals.reshape((v,) + block_shape)
    return MultiField.from_arrays(
        {name: out[i].astype(np.float32) for i, name in enumerate(summary.names)}, shape)


def copula_block_for_budget(shape: Sequence[int], num_vars: int, budget_bytes: int,
                            candidates: Sequence[Sequence[int]] | None = None):
    """Pick the cubic-ish block shape whose payload is closest to ``budget_bytes``."""
    per_block = (2 * num_vars + num_vars * (num_vars - 1) // 2) * 4
    best, best_gap = None, math.inf
    sizes = candidates or [(b,) * len(shape) for b in range(1, max(shape) + 1)]
    for block in sizes:
        blocks = math.prod(math.ceil(n / b) for n, b in zip(shape, block))
        gap = abs(math.log(blocks * per_block / budget_bytes))
        if gap < best_gap:
            best, best_gap = tuple(block), gap
    return best
