"""
Model vs LERP vs block Gaussian summaries
=========================================

Give each method roughly the same number of bytes and compare value
fidelity, isocontour distances, dependency errors and a range query.
"""

import sys

import numpy as np

from mvnf import metrics
from mvnf.baselines import (copula_block_for_budget, copula_reconstruct, copula_summarize,
                            lerp_factor_for_budget, lerp_reduce_expand, lerp_storage_bytes)
from mvnf.model import ModelConfig, reconstruct, to_bytes
from mvnf.synthetic import multivariate_field
from mvnf.trainer import TrainConfig, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
field = multivariate_field((64, 64, 32))

model, _ = train(field, ModelConfig(3, 4, 64, 6), TrainConfig(epochs=epochs, learning_rate=5e-4))
budget = len(to_bytes(model))

# LERP: pick the downsampling factor whose storage is closest to the model
factor = lerp_factor_for_budget(field.grid.shape, field.num_vars, budget)
# copula: block size with comparable storage
block = copula_block_for_budget(field.grid.shape, field.num_vars, budget)
summary = copula_summarize(field, block)

candidates = {
    "model": (budget, reconstruct(model)),
    f"lerp x{factor}": (lerp_storage_bytes(field.grid.shape, field.num_vars, factor),
                        lerp_reduce_expand(field, factor)),
    f"copula {block}": (summary.storage_bytes(), copula_reconstruct(summary, field.grid, seed=0)),
}

query = metrics.parse_predicate("bump_a > 0.2 & bump_a < 1.2 & wave > 0.1 & wave < 0.9")
ref_mask = metrics.qdv(field, query)
print(f"{'method':18s} {'KB':>7s} {'PSNR':>7s} {'chamfer':>8s} {'|dcorr|':>9s} {'dice':>6s}")
for label, (nbytes, cand) in candidates.items():
    psnrs = [v.psnr for v in metrics.evaluate(field, cand).variables]
    chamfer, _ = metrics.aggregate_contours(metrics.contour_study(field, cand, 20, seed=0))
    dep = metrics.dependency_error(field, cand)
    dsc = metrics.dice(ref_mask, metrics.qdv(cand, query))
    print(f"{label:18s} {nbytes / 1024:7.0f} {np.mean(psnrs):7.2f} {chamfer:8.4f} "
          f"{dep.mean_corr_error:9.2e} {dsc:6.3f}")
    print(" " * 19 + "per-variable PSNR " + " ".join(f"{p:.1f}" for p in psnrs))

# LERP reproduces affine fields exactly, so the plane's PSNR is only limited by
# float32 rounding and dominates its mean.
