"""Adam + MSE training loop with step-decay learning rate."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .field import MultiField, make_normalizer, sample_points
from .model import (ModelConfig, NumericalError, ResidualSirenModel, backward,
                    forward, init_model)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 2048
    epochs: int = 300
    decay_rate: float = 0.8
    decay_every: int = 15
    sample_fraction: float = 1.0
    shuffle_seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.decay_rate <= 1:
            raise ValueError("decay_rate must be in (0, 1]")
        if self.batch_size < 1 or self.epochs < 1 or self.decay_every < 1:
            raise ValueError("batch_size, epochs and decay_every must be >= 1")
        if not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must be in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        return self.learning_rate * self.decay_rate ** (epoch // self.decay_every)


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    checksum: str = ""
    num_samples: int = 0
    num_points: int = 0
    sample_fraction: float = 1.0
    fit_psnr: list = field(default_factory=list)

    @property
    def mean_fit_psnr(self) -> float:
        vals = [p for p in self.fit_psnr if p is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fit_psnr"] = [p if p is None or np.isfinite(p) else "inf" for p in self.fit_psnr]
        return d


def fit_quality(model: ResidualSirenModel, coords: np.ndarray, targets: np.ndarray,
                batch_size: int = 65536) -> list:
    """Per-variable PSNR on normalized values, with the full [-1, 1] range as peak.

    The normalized range maps onto the raw range, so this equals the PSNR a
    reconstruction would score on the same points up to float32 rounding.
    Degenerate variables give ``None``.
    """
    pred = np.clip(forward(model, coords, batch_size).astype(np.float64), -1.0, 1.0)
    err = pred - targets.astype(np.float64)
    degenerate = model.normalizer.degenerate if model.normalizer else [False] * err.shape[1]
    out = []
    for k in range(err.shape[1]):
        mse = float(np.mean(np.square(err[:, k])))
        if degenerate[k]:
            out.append(None)
        elif mse == 0:
            out.append(float("inf"))
        else:
            out.append(float(20.0 * np.log10(2.0 / np.sqrt(mse))))
    return out


@dataclass
class AdamState:
    m: list[np.ndarray]
    s: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state differ in length")
    state.step += 1
    t = state.step
    step_size = lr / (1.0 - beta1 ** t)
    corr2 = 1.0 / (1.0 - beta2 ** t)
    for p, g, m, s in zip(params, grads, state.m, state.s):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        s *= beta2
        s += (1.0 - beta2) * np.square(g)
        denom = np.sqrt(s * corr2)
        denom += eps
        p -= (step_size * m / denom).astype(p.dtype, copy=False)
    return state


def train(field_: MultiField, mconfig: ModelConfig, tconfig: TrainConfig,
          progress=None, checkpoint=None,
          checkpoint_every: int = 0) -> tuple[ResidualSirenModel, TrainReport]:
    """Fit a residual SIREN to ``field_``.

    Every epoch visits the sampled points once in a permutation drawn from
    ``shuffle_seed + epoch``; the last partial batch is kept. ``progress``,
    if given, is called as ``progress(epoch, loss, lr)`` after each epoch,
    and ``checkpoint(epoch, model)`` after every ``checkpoint_every``-th.
    """
    if mconfig.in_dim != field_.grid.dims:
        raise ValueError(f"config in_dim={mconfig.in_dim} but grid is {field_.grid.dims}D")
    if mconfig.out_dim != field_.num_vars:
        raise ValueError(f"config out_dim={mconfig.out_dim} but field has "
                         f"{field_.num_vars} variables")

    _, coords, targets = sample_points(field_, tconfig.sample_fraction, tconfig.shuffle_seed)
    n = len(coords)
    model = init_model(mconfig, make_normalizer(field_))
    state = AdamState.zeros_like(model.params)
    report = TrainReport(num_samples=n, num_points=field_.grid.size,
                         sample_fraction=tconfig.sample_fraction)
    bs = tconfig.batch_size

    for epoch in range(tconfig.epochs):
        t0 = time.perf_counter()
        lr = tconfig.lr_at(epoch)
        order = np.random.default_rng(tconfig.shuffle_seed + epoch).permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            try:
                batch_loss, grads = backward(model, coords[idx], targets[idx])
            except NumericalError:
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}") from None
            adam_step(model.params, grads, state, lr,
                      tconfig.adam_beta1, tconfig.adam_beta2, tconfig.adam_eps)
            total += batch_loss * len(idx)
        if not model.all_finite():
            raise NumericalError(f"non-finite parameters after epoch {epoch}")
        epoch_loss = total / n
        report.losses.append(epoch_loss)
        report.learning_rates.append(lr)
        report.epoch_seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d loss %.3e lr %.3e", epoch, epoch_loss, lr)
        if progress is not None:
            progress(epoch, epoch_loss, lr)
        if checkpoint is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            checkpoint(epoch, model)

    report.checksum = model.checksum()
    report.fit_psnr = fit_quality(model, coords, targets)
    return model, report
