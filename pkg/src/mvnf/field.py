"""Gridded multivariate fields, normalization and the manifest dataset format.

A dataset on disk is a JSON manifest plus one raw little-endian float32 file
per variable (row-major, last axis fastest, no header)::

    {"dims": 3, "shape": [64, 64, 32],
     "variables": [{"name": "T", "file": "T.f32", "dtype": "f32le"}, ...]}

An optional ``"spacing"`` entry is accepted and carried along but never used
by the model; normalization is driven by grid indices only.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "GridSpec",
    "VariableMeta",
    "MultiField",
    "Normalizer",
    "load_dataset",
    "save_dataset",
    "make_normalizer",
    "sample_points",
]


class DatasetError(ValueError):
    """Raised for malformed manifests, bad data files or invalid fields."""


@dataclass(frozen=True)
class GridSpec:
    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) not in (2, 3):
            raise DatasetError(f"grid must be 2D or 3D, got shape {shape}")
        if any(s < 2 for s in shape):
            raise DatasetError(f"every axis needs at least 2 points, got {shape}")

    @property
    def dims(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True)
class VariableMeta:
    name: str
    raw_min: float
    raw_max: float

    def __post_init__(self):
        if not (math.isfinite(self.raw_min) and math.isfinite(self.raw_max)):
            raise DatasetError(f"variable {self.name!r}: non-finite range")
        if self.raw_min > self.raw_max:
            raise DatasetError(f"variable {self.name!r}: raw_min > raw_max")

    @property
    def degenerate(self) -> bool:
        return self.raw_min == self.raw_max

    @property
    def value_range(self) -> float:
        return self.raw_max - self.raw_min


def _check_finite(name: str, arr: np.ndarray) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise DatasetError(
            f"variable {name!r} contains non-finite value at flat index {idx}"
        )


@dataclass(frozen=True, eq=False)
class MultiField:
    """``v`` variables sampled on one regular grid.

    ``data`` has shape ``(v, N)`` in float32, one flat row-major array per
    variable. The object is read-only after construction.
    """

    grid: GridSpec
    variables: tuple[VariableMeta, ...]
    data: np.ndarray
    spacing: tuple[float, ...] | None = dc_field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        if not self.variables:
            raise DatasetError("dataset must contain >=1 variable")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DatasetError(f"duplicate variable names in {names}")
        data = np.asarray(self.data)
        if data.dtype != np.float32:
            raise DatasetError(f"data must be float32, got {data.dtype}")
        if data.shape != (len(self.variables), self.grid.size):
            raise DatasetError(
                f"size mismatch: data shape {data.shape}, expected "
                f"({len(self.variables)}, {self.grid.size})"
            )
        for meta, row in zip(self.variables, data):
            _check_finite(meta.name, row)
            lo, hi = float(row.min()), float(row.max())
            if lo != meta.raw_min or hi != meta.raw_max:
                raise DatasetError(
                    f"variable {meta.name!r}: stored range [{meta.raw_min}, "
                    f"{meta.raw_max}] does not match data [{lo}, {hi}]"
                )
        if not data.flags.writeable and data.flags.c_contiguous:
            frozen = data
        else:
            frozen = np.ascontiguousarray(data).copy()
            frozen.flags.writeable = False
        object.__setattr__(self, "data", frozen)

    @classmethod
    def from_arrays(
        cls,
        arrays: Mapping[str, np.ndarray],
        shape: Sequence[int] | None = None,
        spacing: Sequence[float] | None = None,
    ) -> "MultiField":
        """Build a field from ``{name: array}``; ranges are computed here."""
        if not arrays:
            raise DatasetError("dataset must contain >=1 variable")
        items = list(arrays.items())
        if shape is None:
            shape = np.shape(items[0][1])
        grid = GridSpec(tuple(shape))
        rows, metas = [], []
        for name, arr in items:
            flat = np.asarray(arr, dtype=np.float32).reshape(-1)
            if flat.size != grid.size:
                raise DatasetError(
                    f"size mismatch for {name!r}: {flat.size} values, grid has {grid.size}"
                )
            _check_finite(name, flat)
            rows.append(flat)
            metas.append(VariableMeta(name, float(flat.min()), float(flat.max())))
        return cls(grid, tuple(metas), np.stack(rows),
                   None if spacing is None else tuple(float(s) for s in spacing))

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}") from None

    def volume(self, name: str) -> np.ndarray:
        """Variable ``name`` reshaped to the grid (read-only view)."""
        return self.data[self.index(name)].reshape(self.grid.shape)

    def meta(self, name: str) -> VariableMeta:
        return self.variables[self.index(name)]

    def subset(self, names: Sequence[str]) -> "MultiField":
        idx = [self.index(n) for n in names]
        return MultiField(self.grid, tuple(self.variables[i] for i in idx),
                          self.data[idx], self.spacing)


# ---------------------------------------------------------------- normalizer


@dataclass(frozen=True)
class Normalizer:
    """Index -> [0, 1] coordinates and raw -> [-1, 1] values, per variable."""

    shape: tuple[int, ...]
    names: tuple[str, ...]
    raw_min: tuple[float, ...]
    raw_max: tuple[float, ...]

    @property
    def degenerate(self) -> np.ndarray:
        return np.asarray(self.raw_min) == np.asarray(self.raw_max)

    def coords(self, index: np.ndarray) -> np.ndarray:
        """Map integer grid indices ``(n, d)`` to [0, 1]^d (float64)."""
        denom = np.asarray(self.shape, dtype=np.float64) - 1.0
        return np.asarray(index, dtype=np.float64) / denom

    def grid_coords(self) -> np.ndarray:
        """Normalized coordinates of every grid point in row-major order."""
        axes = [np.arange(s) for s in self.shape]
        mesh = np.meshgrid(*axes, indexing="ij")
        index = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return self.coords(index)

    def _affine(self):
        lo = np.asarray(self.raw_min, dtype=np.float64)
        hi = np.asarray(self.raw_max, dtype=np.float64)
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        return lo, span, safe

    def forward(self, values: np.ndarray) -> np.ndarray:
        """Raw values ``(..., v)`` to [-1, 1]; constant variables map to 0."""
        lo, span, safe = self._affine()
        out = 2.0 * (np.asarray(values, dtype=np.float64) - lo) / safe - 1.0
        return np.where(span > 0, out, 0.0)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        lo, span, _ = self._affine()
        return (np.asarray(values, dtype=np.float64) + 1.0) * 0.5 * span + lo

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "names": list(self.names),
            "raw_min": list(self.raw_min),
            "raw_max": list(self.raw_max),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Normalizer":
        return cls(tuple(d["shape"]), tuple(d["names"]),
                   tuple(float(x) for x in d["raw_min"]),
                   tuple(float(x) for x in d["raw_max"]))


def make_normalizer(field: MultiField) -> Normalizer:
    return Normalizer(
        field.grid.shape,
        tuple(field.names),
        tuple(v.raw_min for v in field.variables),
        tuple(v.raw_max for v in field.variables),
    )


def sample_points(field: MultiField, fraction: float, seed: int):
    """Pick ``ceil(fraction * N)`` distinct grid points uniformly at random.

    Returns ``(indices, coords, targets)``: flat indices (sorted), normalized
    coordinates ``(n, d)`` and normalized targets ``(n, v)``, both float32.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n_total = field.grid.size
    count = math.ceil(fraction * n_total)
    if count >= n_total:
        idx = np.arange(n_total)
    else:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n_total, size=count, replace=False))
    norm = make_normalizer(field)
    grid_index = np.stack(np.unravel_index(idx, field.grid.shape), axis=1)
    coords = norm.coords(grid_index).astype(np.float32)
    targets = norm.forward(field.data[:, idx].T).astype(np.float32)
    return idx, coords, targets


# ----------------------------------------------------------------------- I/O


def load_dataset(manifest_path: str | os.PathLike) -> MultiField:
    path = Path(manifest_path)
    if not path.is_file():
        raise DatasetError(f"missing manifest: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid manifest JSON in {path}: {exc}") from exc
    try:
        shape = tuple(int(s) for s in manifest["shape"])
        dims = int(manifest.get("dims", len(shape)))
        entries = manifest["variables"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed manifest {path}: {exc}") from exc
    if dims != len(shape):
        raise DatasetError(f"dims={dims} disagrees with shape {list(shape)}")
    grid = GridSpec(shape)
    if not entries:
        raise DatasetError("dataset must contain >=1 variable")

    arrays = {}
    for entry in entries:
        name = entry["name"]
        dtype = entry.get("dtype", "f32le")
        if dtype != "f32le":
            raise DatasetError(f"variable {name!r}: unsupported dtype {dtype!r}")
        fpath = path.parent / entry["file"]
        if not fpath.is_file():
            raise DatasetError(f"missing data file for {name!r}: {fpath}")
        raw = fpath.read_bytes()
        if len(raw) != 4 * grid.size:
            raise DatasetError(
                f"size mismatch for {name!r}: {len(raw)} bytes, expected {4 * grid.size}"
            )
        digest = entry.get("sha256")
        if digest is not None and hashlib.sha256(raw).hexdigest() != digest:
            raise DatasetError(f"checksum mismatch for {name!r}: {fpath}")
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        if "raw_min" in entry or "raw_max" in entry:
            _check_finite(name, arr)
            lo, hi = float(arr.min()), float(arr.max())
            if entry.get("raw_min", lo) != lo or entry.get("raw_max", hi) != hi:
                raise DatasetError(
                    f"variable {name!r}: range verification failed "
                    f"(manifest [{entry.get('raw_min')}, {entry.get('raw_max')}], "
                    f"data [{lo}, {hi}])"
                )
        arrays[name] = arr
    if len(arrays) != len(entries):
        raise DatasetError("duplicate variable names in manifest")
    return MultiField.from_arrays(arrays, shape, manifest.get("spacing"))


def save_dataset(field: MultiField, directory: str | os.PathLike,
                 name: str = "manifest.json") -> Path:
    """Write ``field`` as manifest + per-variable ``.f32`` files.

    The manifest also records each variable's range and a SHA-256 of its data
    file so that corrupted files are caught by :func:`load_dataset`.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, meta in enumerate(field.variables):
        fname = f"{i:03d}_{_safe(meta.name)}.f32"
        raw = field.data[i].astype("<f4").tobytes()
        (out / fname).write_bytes(raw)
        entries.append({"name": meta.name, "file": fname, "dtype": "f32le",
                        "raw_min": meta.raw_min, "raw_max": meta.raw_max,
                        "sha256": hashlib.sha256(raw).hexdigest()})
    manifest = {"dims": field.grid.dims, "shape": list(field.grid.shape),
                "variables": entries}
    if field.spacing is not None:
        manifest["spacing"] = list(field.spacing)
    mpath = out / name
    mpath.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return mpath


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)
