"""
Correlation and mutual information error maps
=============================================

How well does a reduced representation keep the relationships between
variables? Compute Pearson and histogram MI matrices, their absolute errors,
and render them as heatmaps on one shared color scale.
"""

import sys
from pathlib import Path

import numpy as np

from mvnf import metrics
from mvnf.baselines import copula_reconstruct, copula_summarize, lerp_reduce_expand
from mvnf.render import render_matrix_heatmap
from mvnf.synthetic import multivariate_field

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

field = multivariate_field((64, 64, 32))
np.set_printoptions(precision=3, suppress=True)
print("correlation\n", metrics.corr_matrix(field))
print("mutual information (nats)\n", metrics.mi_matrix(field))

cands = {
    "lerp4": lerp_reduce_expand(field, 4),
    "copula": copula_reconstruct(copula_summarize(field, (4, 4, 4)), field.grid, seed=0),
}
errors = {k: metrics.dependency_error(field, c) for k, c in cands.items()}

# shared vmax: equal colors mean equal absolute error across methods
vmax = max(e.corr_error.max() for e in errors.values())
for label, err in errors.items():
    print(f"{label}: mean |dcorr| {err.mean_corr_error:.2e}, mean |dMI| {err.mean_mi_error:.3f}")
    render_matrix_heatmap(err.corr_error, 0.0, vmax, cell=16).save(out / f"{label}_corr_error.ppm")
print("heatmaps written to", out, "with vmax", f"{vmax:.3e}")
