"""Fidelity metrics for reconstructed multivariate fields."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage import measure

from .field import MultiField

TOLERANCE = 0.05


# ------------------------------------------------------------ value fidelity


def psnr(reference: np.ndarray, candidate: np.ndarray,
         peak: float | None = None) -> float:
    """``20 log10(peak / RMSE)`` with peak = reference max - min.

    Returns ``inf`` for identical inputs.
    """
    ref = np.asarray(reference, dtype=np.float64).ravel()
    cand = np.asarray(candidate, dtype=np.float64).ravel()
    if ref.shape != cand.shape:
        raise ValueError(f"length mismatch: {ref.size} vs {cand.size}")
    mse = float(np.mean((ref - cand) ** 2))
    if mse == 0.0:
        return math.inf
    if peak is None:
        peak = float(ref.max() - ref.min())
    if peak == 0.0:
        raise ValueError("degenerate reference (zero range) with nonzero error")
    return 20.0 * math.log10(peak / math.sqrt(mse))


def _scale_to_unit(ref: np.ndarray, cand: np.ndarray):
    lo, hi = float(ref.min()), float(ref.max())
    scale = 2.0 / (hi - lo) if hi > lo else 1.0
    return (ref - lo) * scale - 1.0, (cand - lo) * scale - 1.0


def error_stats(reference: np.ndarray, candidate: np.ndarray,
                tolerance: float = TOLERANCE) -> tuple[float, float, float]:
    """Max, 95th percentile (nearest rank) and fraction above ``tolerance``
    of the absolute error, on values mapped to [-1, 1] by the reference range.
    """
    ref = np.asarray(reference, dtype=np.float64).ravel()
    cand = np.asarray(candidate, dtype=np.float64).ravel()
    r, c = _scale_to_unit(ref, cand)
    err = np.sort(np.abs(r - c))
    rank = max(math.ceil(0.95 * err.size), 1)
    return float(err[-1]), float(err[rank - 1]), float(np.mean(err > tolerance))


def gradient_magnitude(field: MultiField, variable: str) -> np.ndarray:
    """Central differences inside, one-sided at the border, unit spacing."""
    vol = field.volume(variable).astype(np.float64)
    if min(vol.shape) < 3:
        raise ValueError("gradient needs >=3 points per axis")
    parts = np.gradient(vol, edge_order=1)
    return np.sqrt(sum(g * g for g in parts))


def gradient_psnr(reference: MultiField, candidate: MultiField, variable: str) -> float:
    ref = gradient_magnitude(reference, variable)
    return psnr(ref, gradient_magnitude(candidate, variable))


# ------------------------------------------------------------------ contours


@dataclass
class ContourSet:
    variable: str
    isovalue: float
    vertices: np.ndarray          # (n, d) in grid index coordinates
    cells: np.ndarray             # (m, 2) segments in 2D, (m, 3) triangles in 3D

    @property
    def empty(self) -> bool:
        return len(self.vertices) == 0


def extract_contour(field: MultiField, variable: str, isovalue: float) -> ContourSet:
    """Marching squares (2D) or marching cubes (3D) with linear edge
    interpolation. An isovalue outside the data range gives an empty set."""
    vol = field.volume(variable).astype(np.float64)
    d = vol.ndim
    empty = ContourSet(variable, isovalue, np.zeros((0, d)), np.zeros((0, d), dtype=np.int64))
    if not vol.min() < isovalue < vol.max():
        return empty
    if d == 2:
        verts, segs, offset = [], [], 0
        for line in measure.find_contours(vol, isovalue):
            verts.append(line)
            k = np.arange(offset, offset + len(line) - 1)
            segs.append(np.stack([k, k + 1], axis=1))
            offset += len(line)
        if not verts:
            return empty
        return ContourSet(variable, isovalue, np.concatenate(verts), np.concatenate(segs))
    try:
        verts, faces, _, _ = measure.marching_cubes(vol, isovalue, method="lorensen")
    except (ValueError, RuntimeError):
        return empty
    return ContourSet(variable, isovalue, verts.astype(np.float64), faces)


def _nn_dist(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Distance from each ``src`` point to its nearest ``dst`` point.

    The KD-tree only picks the neighbour; the distance itself is recomputed
    with the same arithmetic as the brute-force path so both agree bitwise.
    """
    _, idx = cKDTree(dst).query(src, k=1)
    diff = src - dst[idx]
    return np.sqrt(np.sum(diff * diff, axis=1))


def _nn_dist_brute(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    diff = src[:, None, :] - dst[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2)).min(axis=1)


def _check_sets(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("contour missing: empty point set")
    return a, b


def chamfer(a: np.ndarray, b: np.ndarray, brute: bool = False) -> float:
    """Sum of the two mean nearest-neighbour distances (not squared)."""
    a, b = _check_sets(a, b)
    nn = _nn_dist_brute if brute else _nn_dist
    return float(np.mean(nn(a, b)) + np.mean(nn(b, a)))


def hausdorff(a: np.ndarray, b: np.ndarray, brute: bool = False) -> float:
    a, b = _check_sets(a, b)
    nn = _nn_dist_brute if brute else _nn_dist
    return float(max(nn(a, b).max(), nn(b, a).max()))


@dataclass
class ContourResult:
    variable: str
    isovalues: list[float]
    chamfer: list[float]
    hausdorff: list[float]
    excluded: int = 0

    @property
    def mean_chamfer(self) -> float:
        return float(np.mean(self.chamfer)) if self.chamfer else math.nan

    @property
    def mean_hausdorff(self) -> float:
        return float(np.mean(self.hausdorff)) if self.hausdorff else math.nan


def contour_study(reference: MultiField, candidate: MultiField, n_isovalues: int = 20,
                  seed: int = 0, variables: Sequence[str] | None = None
                  ) -> dict[str, ContourResult]:
    """Average contour distances over random isovalues, per variable.

    Isovalues are drawn uniformly over each reference variable's range;
    isovalues where either contour is empty are skipped and counted.
    """
    _check_compatible(reference, candidate)
    rng = np.random.default_rng(seed)
    results = {}
    for name in variables or reference.names:
        meta = reference.meta(name)
        isos = rng.uniform(meta.raw_min, meta.raw_max, size=n_isovalues)
        res = ContourResult(name, [], [], [])
        for iso in isos:
            ca = extract_contour(reference, name, float(iso))
            cb = extract_contour(candidate, name, float(iso))
            if ca.empty or cb.empty:
                res.excluded += 1
                continue
            res.isovalues.append(float(iso))
            res.chamfer.append(chamfer(ca.vertices, cb.vertices))
            res.hausdorff.append(hausdorff(ca.vertices, cb.vertices))
        results[name] = res
    return results


def aggregate_contours(results: dict[str, ContourResult]) -> tuple[float, float]:
    """Dataset-level mean of the per-variable means."""
    ch = [r.mean_chamfer for r in results.values() if r.chamfer]
    hd = [r.mean_hausdorff for r in results.values() if r.hausdorff]
    return (float(np.mean(ch)) if ch else math.nan,
            float(np.mean(hd)) if hd else math.nan)


# --------------------------------------------------------------- dependency


def corr_matrix(field: MultiField) -> np.ndarray:
    """Pearson correlation over all grid points; constant variables get 0."""
    x = field.data.astype(np.float64)
    centered = x - x.mean(axis=1, keepdims=True)
    std = np.sqrt(np.mean(centered ** 2, axis=1))
    cov = centered @ centered.T / x.shape[1]
    denom = np.outer(std, std)
    out = np.zeros_like(cov)
    ok = denom > 0
    out[ok] = cov[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def _bin_indices(values: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.int64)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def mi_matrix(field: MultiField, bins: int = 128) -> np.ndarray:
    """Pairwise mutual information (nats) from ``bins x bins`` histograms
    over each variable's own range. The diagonal holds the entropy."""
    x = field.data.astype(np.float64)
    v, n = x.shape
    idx = [_bin_indices(row, bins) for row in x]
    out = np.zeros((v, v))
    for i in range(v):
        pi = np.bincount(idx[i], minlength=bins) / n
        out[i, i] = _entropy(pi)
        for j in range(i + 1, v):
            pj = np.bincount(idx[j], minlength=bins) / n
            joint = np.bincount(idx[i] * bins + idx[j], minlength=bins * bins) / n
            mi = _entropy(pi) + _entropy(pj) - _entropy(joint)
            out[i, j] = out[j, i] = mi
    return out


@dataclass
class DependencyError:
    corr_error: np.ndarray
    mi_error: np.ndarray
    mean_corr_error: float
    mean_mi_error: float


def dependency_error(reference: MultiField, candidate: MultiField,
                     bins: int = 128) -> DependencyError:
    """Absolute differences of correlation and MI matrices; the means run
    over unordered pairs ``i < j``."""
    _check_compatible(reference, candidate)
    dc = np.abs(corr_matrix(reference) - corr_matrix(candidate))
    dm = np.abs(mi_matrix(reference, bins) - mi_matrix(candidate, bins))
    iu = np.triu_indices(reference.num_vars, 1)
    if len(iu[0]) == 0:
        return DependencyError(dc, dm, 0.0, 0.0)
    return DependencyError(dc, dm, float(dc[iu].mean()), float(dm[iu].mean()))


# ---------------------------------------------------------------------- QDV


class QueryParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class Clause:
    variable: str
    low: float
    high: float


@dataclass(frozen=True)
class QueryPredicate:
    """Conjunction of open intervals ``low < variable < high``."""

    clauses: tuple[Clause, ...]

    def __post_init__(self):
        for c in self.clauses:
            if not c.low < c.high:
                raise ValueError(f"empty interval for {c.variable}: ({c.low}, {c.high})")

    def __str__(self):
        parts = []
        for c in self.clauses:
            if c.low > -math.inf:
                parts.append(f"{c.variable} > {c.low:g}")
            if c.high < math.inf:
                parts.append(f"{c.variable} < {c.high:g}")
        return " & ".join(parts)


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<op>[<>&])
""", re.VERBOSE)


def _tokenize(text: str):
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise QueryParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            yield m.lastgroup, m.group(), pos
        pos = m.end()
    yield "end", "", len(text)


def parse_predicate(text: str) -> QueryPredicate:
    """Parse ``VAR > a & VAR < b [& ...]``. Bounds are strict; comparisons
    on the same variable are merged into one interval."""
    tokens = list(_tokenize(text))
    bounds: dict[str, list[float]] = {}
    i = 0
    while True:
        kind, val, pos = tokens[i]
        if kind != "name":
            raise QueryParseError("expected variable name", pos)
        name = val
        kind, op, pos = tokens[i + 1]
        if kind != "op" or op == "&":
            raise QueryParseError("expected '<' or '>'", pos)
        kind, num, pos = tokens[i + 2]
        if kind != "num":
            raise QueryParseError("expected number", pos)
        lo_hi = bounds.setdefault(name, [-math.inf, math.inf])
        if op == ">":
            lo_hi[0] = max(lo_hi[0], float(num))
        else:
            lo_hi[1] = min(lo_hi[1], float(num))
        kind, val, pos = tokens[i + 3]
        if kind == "end":
            break
        if val != "&":
            raise QueryParseError("expected '&'", pos)
        i += 4
    return QueryPredicate(tuple(Clause(n, lo, hi) for n, (lo, hi) in bounds.items()))


def qdv(field: MultiField, predicate: QueryPredicate) -> np.ndarray:
    """Boolean mask (grid-shaped) of points satisfying every clause."""
    mask = np.ones(field.grid.shape, dtype=bool)
    for c in predicate.clauses:
        vol = field.volume(c.variable)
        mask &= (vol > c.low) & (vol < c.high)
    return mask


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """``2 |A & B| / (|A| + |B|)``; two empty masks score 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask shape mismatch")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


# --------------------------------------------------------------------- SSIM


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 255.0,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all full 11x11 Gaussian windows (no padding)."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"size mismatch: {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < 11:
        raise ValueError("images must be 2D and at least 11x11")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def blur(img):
        return ndimage.gaussian_filter(img, sigma, truncate=3.5, mode="reflect")

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    r = int(3.5 * sigma + 0.5)
    return float(s[r:-r, r:-r].mean())


# ------------------------------------------------------------------ reports


def _check_compatible(a: MultiField, b: MultiField) -> None:
    if a.grid.shape != b.grid.shape:
        raise ValueError(f"grid mismatch: {a.grid.shape} vs {b.grid.shape}")
    if a.names != b.names:
        raise ValueError(f"variable mismatch: {a.names} vs {b.names}")


@dataclass
class VariableScores:
    name: str
    psnr: float
    max_abs: float
    p95_abs: float
    frac_above: float
    gradient_psnr: float | None = None


@dataclass
class EvalReport:
    variables: list[VariableScores] = dc_field(default_factory=list)
    contours: dict | None = None
    dependency: dict | None = None
    dice: dict | None = None
    ssim: dict | None = None

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([v.psnr for v in self.variables]))

    @property
    def mean_max_abs(self) -> float:
        return float(np.mean([v.max_abs for v in self.variables]))

    @property
    def mean_p95_abs(self) -> float:
        return float(np.mean([v.p95_abs for v in self.variables]))

    @property
    def mean_frac_above(self) -> float:
        return float(np.mean([v.frac_above for v in self.variables]))

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, float) and math.isinf(x):
                return "inf" if x > 0 else "-inf"
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            return x

        out = {
            "variables": [clean(vars(v)) for v in self.variables],
            "mean": clean({"psnr": self.mean_psnr, "max_abs": self.mean_max_abs,
                           "p95_abs": self.mean_p95_abs, "frac_above": self.mean_frac_above}),
        }
        for key in ("contours", "dependency", "dice", "ssim"):
            val = getattr(self, key)
            if val is not None:
                out[key] = clean(val)
        return out


def evaluate(reference: MultiField, candidate: MultiField, gradients: bool = False
             ) -> EvalReport:
    """Per-variable PSNR and error statistics (optionally gradient PSNR)."""
    _check_compatible(reference, candidate)
    report = EvalReport()
    for i, name in enumerate(reference.names):
        ref, cand = reference.data[i], candidate.data[i]
        mx, p95, frac = error_stats(ref, cand)
        score = VariableScores(name, psnr(ref, cand), mx, p95, frac)
        if gradients:
            score.gradient_psnr = gradient_psnr(reference, candidate, name)
        report.variables.append(score)
    return report
