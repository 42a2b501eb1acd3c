"""Analytic multivariate test fields.

The default 64x64x32 dataset has four variables: two overlapping Gaussian
bumps that are strongly (but not linearly) correlated, a tilted plane, and a
separable sinusoid product. All values are smooth so any loss of fidelity is
attributable to the reduction method, not to aliasing in the source.
"""
from __future__ import annotations

import numpy as np

from .field import MultiField

DEFAULT_SHAPE = (64, 64, 32)


def unit_grid(shape):
    """Per-axis coordinates in [0, 1], broadcast to the full grid."""
    axes = [np.linspace(0.0, 1.0, n) for n in shape]
    return np.meshgrid(*axes, indexing="ij")


def _gauss(p, center, sigma):
    r2 = sum((c - x) ** 2 for c, x in zip(center, p))
    return np.exp(-r2 / (2.0 * sigma * sigma))


def multivariate_field(shape=DEFAULT_SHAPE) -> MultiField:
    """Four-variable analytic dataset on a 2D or 3D grid."""
    p = unit_grid(shape)
    if len(shape) == 2:
        c1, c2, c3 = (0.35, 0.4), (0.62, 0.58), (0.7, 0.25)
        plane = 0.8 * p[0] - 0.5 * p[1] + 0.25
        wave = np.sin(2 * np.pi * 2.5 * p[0]) * np.sin(2 * np.pi * 2.0 * p[1])
    else:
        c1, c2, c3 = (0.35, 0.4, 0.45), (0.62, 0.58, 0.55), (0.7, 0.25, 0.6)
        plane = 0.8 * p[0] - 0.5 * p[1] + 0.3 * p[2] + 0.25
        wave = (np.sin(2 * np.pi * 2.5 * p[0]) * np.sin(2 * np.pi * 2.0 * p[1])
                * np.cos(2 * np.pi * 1.0 * p[2]))
    bump_a = 1.5 * _gauss(p, c1, 0.12) + 1.0 * _gauss(p, c2, 0.08)
    bump_b = 1.2 * _gauss(p, c1, 0.15) + 0.9 * _gauss(p, c2, 0.10) + 0.5 * _gauss(p, c3, 0.07)
    return MultiField.from_arrays(
        {"bump_a": bump_a, "bump_b": 2.0 * bump_b + 1.0, "plane": plane, "wave": wave},
        shape,
    )


def sphere_distance(shape=(16, 16, 16), center=None) -> np.ndarray:
    """Euclidean distance (in grid units) to ``center`` (default: grid middle)."""
    if center is None:
        center = [(n - 1) / 2.0 for n in shape]
    idx = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij")
    return np.sqrt(sum((i - c) ** 2 for i, c in zip(idx, center)))
