"""Parameter studies: residual-block count, sampling fraction, variable count."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .field import MultiField
from .metrics import psnr
from .model import ModelConfig, compression_ratio, reconstruct, to_bytes
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

BLOCKS = (4, 6, 8, 10, 12, 14)
FRACTIONS = (0.25, 0.5, 0.75, 1.0)


@dataclass
class SweepPoint:
    kind: str
    value: float
    num_vars: int
    storage_bytes: int = 0
    num_params: int = 0
    compression_ratio: float = math.nan
    mean_psnr: float = math.nan
    fit_psnr: float = math.nan
    final_loss: float = math.nan
    error: str = ""

    @property
    def storage_kb(self) -> float:
        return self.storage_bytes / 1024.0


def _run_point(field: MultiField, mconfig: ModelConfig, tconfig: TrainConfig,
               kind: str, value) -> SweepPoint:
    point = SweepPoint(kind, value, field.num_vars)
    try:
        model, report = train(field, mconfig, tconfig)
        rec = reconstruct(model)
        point.storage_bytes = len(to_bytes(model))
        point.num_params = model.num_params
        point.compression_ratio = compression_ratio(point.storage_bytes, field)
        point.mean_psnr = float(np.mean([psnr(a, b) for a, b in zip(field.data, rec.data)]))
        point.fit_psnr = report.mean_fit_psnr
        point.final_loss = report.losses[-1]
    except Exception as exc:  # a failed point is recorded, the sweep goes on
        log.warning("sweep point %s=%s failed: %s", kind, value, exc)
        point.error = f"{type(exc).__name__}: {exc}"
    return point


def _run_all(jobs: int, tasks: list) -> list[SweepPoint]:
    """Run ``(field, mconfig, tconfig, kind, value)`` tasks, in order."""
    if jobs <= 1:
        return [_run_point(*t) for t in tasks]
    # Each point is independent and seeded, so results match the serial run.
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_point, *zip(*tasks)))


def sweep_blocks(field: MultiField, mconfig: ModelConfig, tconfig: TrainConfig,
                 blocks=BLOCKS, jobs: int = 1) -> list[SweepPoint]:
    return _run_all(jobs, [(field, replace(mconfig, num_res_blocks=b), tconfig, "blocks", b)
                           for b in blocks])


def sweep_fraction(field: MultiField, mconfig: ModelConfig, tconfig: TrainConfig,
                   fractions=FRACTIONS, jobs: int = 1) -> list[SweepPoint]:
    """Train on a random subset; PSNR is always measured on the full grid."""
    return _run_all(jobs, [(field, mconfig, replace(tconfig, sample_fraction=f),
                            "sample_frac", f) for f in fractions])


def sweep_variables(field: MultiField, mconfig: ModelConfig, tconfig: TrainConfig,
                    counts=None, jobs: int = 1) -> list[SweepPoint]:
    """Train on the first ``k`` variables; only the output layer changes size."""
    counts = counts or range(1, field.num_vars + 1)
    tasks = []
    for k in counts:
        sub = field.subset(field.names[:k])
        tasks.append((sub, replace(mconfig, out_dim=k), tconfig, "variables", k))
    return _run_all(jobs, tasks)


def to_csv(points: list[SweepPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kind", "value", "num_vars", "num_params", "storage_kb",
                     "compression_ratio", "mean_psnr", "fit_psnr", "final_loss", "error"])
    for p in points:
        writer.writerow([p.kind, p.value, p.num_vars, p.num_params, f"{p.storage_kb:.2f}",
                         f"{p.compression_ratio:.2f}:1", f"{p.mean_psnr:.3f}",
                         f"{p.fit_psnr:.3f}", f"{p.final_loss:.6e}", p.error])
    return buf.getvalue()


def to_records(points: list[SweepPoint]) -> list[dict]:
    return [asdict(p) for p in points]
