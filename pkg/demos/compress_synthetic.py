"""
Compressing a multivariate field with a residual SIREN
======================================================

Fit one network to four variables on a 3D grid, decode it back to the grid
and look at what the bytes bought us. Set ``MVNF_FULL=1`` for the full
300-epoch run (a few minutes on one core); the default is a short run.
"""

import os
import sys
from pathlib import Path

import numpy as np

from mvnf import metrics
from mvnf.model import ModelConfig, compression_ratio, format_ratio, reconstruct, save_model
from mvnf.render import image_name, render_field
from mvnf.synthetic import multivariate_field
from mvnf.trainer import TrainConfig, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)
full = os.environ.get("MVNF_FULL") == "1"

# two correlated bumps, a tilted plane and a sinusoid product
field = multivariate_field((64, 64, 32))
print("variables:", field.names, "grid:", field.grid.shape)

mconfig = ModelConfig(in_dim=3, out_dim=field.num_vars, hidden_width=64, num_res_blocks=6)
tconfig = TrainConfig(epochs=300 if full else 20,
                      learning_rate=1e-4 if full else 5e-4)

model, report = train(field, mconfig, tconfig,
                      progress=lambda e, loss, lr: e % 5 == 0 and print(f"epoch {e:3d} {loss:.3e}"))
nbytes = save_model(model, out / "synthetic.mvnf")
print(f"model: {model.num_params} params, {nbytes} bytes, CR "
      f"{format_ratio(compression_ratio(nbytes, field))}")

# decode every grid point and score it
recon = reconstruct(model)
rep = metrics.evaluate(field, recon)
for v in rep.variables:
    print(f"{v.name:8s} PSNR {v.psnr:6.2f} dB  max {v.max_abs:.4f}  "
          f"frac>0.05 {v.frac_above:.2e}")
print(f"mean PSNR {rep.mean_psnr:.2f} dB")

# same slice, same color range, one image per source
for name in field.names:
    meta = field.meta(name)
    for label, src in (("reference", field), ("model", recon)):
        img = render_field(src, name, 2, 16, "viridis", (meta.raw_min, meta.raw_max))
        img.save(out / image_name("synthetic", name, label))
print("slices written to", out)
