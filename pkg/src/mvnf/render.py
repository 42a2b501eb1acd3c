"""Deterministic 8-bit images of fields and matrices, written as binary PPM."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field import MultiField

# 256-entry viridis table, RGB bytes in hex.
_VIRIDIS_HEX = (
    "44015444025645045745055946075a46085c460a5d460b5e470d60470e61471063471164"
    "47136548146748166848176948186a481a6c481b6d481c6e481d6f481f70482071482173"
    "482374482475482576482677482878482979472a7a472c7a472d7b472e7c472f7d46307e"
    "46327e46337f463480453581453781453882443983443a83443b84433d84433e85423f85"
    "4240864241864142874144874045884046883f47883f48893e49893e4a893e4c8a3d4d8a"
    "3d4e8a3c4f8a3c508b3b518b3b528b3a538b3a548c39558c39568c38588c38598c375a8c"
    "375b8d365c8d365d8d355e8d355f8d34608d34618d33628d33638d32648e32658e31668e"
    "31678e31688e30698e306a8e2f6b8e2f6c8e2e6d8e2e6e8e2e6f8e2d708e2d718e2c718e"
    "2c728e2c738e2b748e2b758e2a768e2a778e2a788e29798e297a8e297b8e287c8e287d8e"
    "277e8e277f8e27808e26818e26828e26828e25838e25848e25858e24868e24878e23888e"
    "23898e238a8d228b8d228c8d228d8d218e8d218f8d21908d21918c20928c20928c20938c"
    "1f948c1f958b1f968b1f978b1f988b1f998a1f9a8a1e9b8a1e9c891e9d891f9e891f9f88"
    "1fa0881fa1881fa1871fa28720a38620a48621a58521a68522a78522a88423a98324aa83"
    "25ab8225ac8226ad8127ad8128ae8029af7f2ab07f2cb17e2db27d2eb37c2fb47c31b57b"
    "32b67a34b67935b77937b87838b9773aba763bbb753dbc743fbc7340bd7242be7144bf70"
    "46c06f48c16e4ac16d4cc26c4ec36b50c46a52c56954c56856c66758c7655ac8645cc863"
    "5ec96260ca6063cb5f65cb5e67cc5c69cd5b6ccd5a6ece5870cf5773d05675d05477d153"
    "7ad1517cd2507fd34e81d34d84d44b86d54989d5488bd6468ed64590d74393d74195d840"
    "98d83e9bd93c9dd93ba0da39a2da37a5db36a8db34aadc32addc30b0dd2fb2dd2db5de2b"
    "b8de29bade28bddf26c0df25c2df23c5e021c8e020cae11fcde11dd0e11cd2e21bd5e21a"
    "d8e219dae319dde318dfe318e2e418e5e419e7e419eae51aece51befe51cf1e51df4e61e"
    "f6e620f8e621fbe723fde725"
)

COLORMAPS = {
    "viridis": np.frombuffer(bytes.fromhex(_VIRIDIS_HEX), dtype=np.uint8).reshape(256, 3),
    "gray": np.repeat(np.arange(256, dtype=np.uint8)[:, None], 3, axis=1),
}


@dataclass
class Image:
    """RGB pixels, rows top to bottom; ``pixels`` has shape ``(h, w, 3)``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError("pixels must be a (h, w, 3) uint8 array")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        self.pixels = np.ascontiguousarray(px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def luminance(self) -> np.ndarray:
        """ITU-R BT.601 luma in [0, 255] (float64)."""
        rgb = self.pixels.astype(np.float64)
        return rgb @ np.array([0.299, 0.587, 0.114])

    def to_ppm(self) -> bytes:
        return f"P6\n{self.width} {self.height}\n255\n".encode("ascii") + self.pixels.tobytes()

    def save(self, path: str | os.PathLike) -> int:
        blob = self.to_ppm()
        Path(path).write_bytes(blob)
        return len(blob)


def image_name(dataset: str, variable: str, method: str) -> str:
    """File name for a rendered slice: ``<dataset>_<var>_<method>.ppm``."""
    return f"{dataset}_{variable}_{method}.ppm"


def read_ppm(path: str | os.PathLike) -> Image:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError("only 8-bit binary PPM (P6) is supported")
    w, h = int(parts[1]), int(parts[2])
    data = np.frombuffer(parts[4][: 3 * w * h], dtype=np.uint8)
    return Image(data.reshape(h, w, 3).copy())


def colormap_indices(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """Clamp to ``[vmin, vmax]``, map linearly to [0, 1], then to 0..255."""
    v = np.asarray(values, dtype=np.float64)
    if vmax > vmin:
        t = (np.clip(v, vmin, vmax) - vmin) / (vmax - vmin)
    else:
        t = np.zeros_like(v)
    return np.rint(t * 255.0).astype(np.intp)


def apply_colormap(values: np.ndarray, vmin: float, vmax: float,
                   colormap: str = "viridis") -> Image:
    lut = COLORMAPS[colormap]
    return Image(lut[colormap_indices(values, vmin, vmax)])


def field_slice(field: MultiField, variable: str, slice_axis: int | None = None,
                slice_index: int | None = None) -> np.ndarray:
    vol = field.volume(variable)
    if vol.ndim == 2:
        return vol
    if slice_axis is None or slice_index is None:
        raise ValueError("3D fields need slice_axis and slice_index")
    if not 0 <= slice_axis < 3:
        raise ValueError(f"slice_axis {slice_axis} out of range")
    if not 0 <= slice_index < vol.shape[slice_axis]:
        raise IndexError(f"slice index {slice_index} out of bounds for axis "
                         f"{slice_axis} of size {vol.shape[slice_axis]}")
    return np.take(vol, slice_index, axis=slice_axis)


def render_field(field: MultiField, variable: str, slice_axis: int | None = None,
                 slice_index: int | None = None, colormap: str = "viridis",
                 value_range: tuple[float, float] | None = None) -> Image:
    """One pixel per grid point: rows follow the first remaining axis."""
    plane = field_slice(field, variable, slice_axis, slice_index)
    if value_range is None:
        meta = field.meta(variable)
        value_range = (meta.raw_min, meta.raw_max)
    return apply_colormap(plane, value_range[0], value_range[1], colormap)


def render_mask(mask: np.ndarray, slice_axis: int | None = None,
                slice_index: int | None = None) -> Image:
    m = np.asarray(mask, dtype=bool)
    if m.ndim == 3:
        m = np.take(m, slice_index, axis=slice_axis)
    return apply_colormap(m.astype(np.float64), 0.0, 1.0, "gray")


def render_matrix_heatmap(matrix: np.ndarray, vmin: float, vmax: float,
                          colormap: str = "viridis", cell: int = 8) -> Image:
    """Each matrix entry becomes a ``cell x cell`` block of one color."""
    mat = np.asarray(matrix, dtype=np.float64)
    img = apply_colormap(mat, vmin, vmax, colormap)
    return Image(np.repeat(np.repeat(img.pixels, cell, axis=0), cell, axis=1))
