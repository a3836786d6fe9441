"""Unsupervised training of the learned solver on the squared residual norm.

Every batch draws fresh coefficient fields and white-noise right-hand sides,
runs the setup network and one solve application, and takes one Adam step on

    loss = mean_i || rhs_i - A_i sol_i ||^2 .

Grid size doubles (and the level count grows by one, the batch halves) every
``size_step`` epochs until ``max_size``.
"""
import csv
import logging
import math
import resource
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .autodiff import Tape
from .datasets import parse_distribution, sample_coefficients
from .discretization import ProblemSpec, operator_on_tape
from .learned import init_weights, setup_on_tape, solve_on_tape

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "batch", "loss", "lr", "size", "level", "batch_size",
                   "seconds", "peak_bytes")


class TrainingDiverged(FloatingPointError):
    """Loss became non-finite or negative."""

    def __init__(self, message, epoch, batch, batch_seed):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.batch_seed = batch_seed


@dataclass
class TrainConfig:
    epochs: int = 50
    batches_per_epoch: int = 1000
    lr: float = 0.003
    lr_step_epochs: int = 2
    lr_gamma: float = 0.8
    size_step: int = 10
    initial_size: int = 31
    initial_level: int = 4
    initial_batch: int = 16
    max_size: int = 511
    min_batch: int = 2
    re_limit: float = 1000.0
    channels: int = 8
    precision: str = "f64"
    seed: int = 0
    coef_distribution: str = "white_noise"

    def __post_init__(self):
        for name in ("epochs", "batches_per_epoch", "lr_step_epochs", "size_step",
                     "initial_level", "initial_batch", "min_batch", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or not 0 < self.lr_gamma <= 1:
            raise ValueError("lr must be positive and lr_gamma in (0, 1]")
        n = self.initial_size
        if n < 1 or (n + 1) & n:
            raise ValueError(f"initial_size must be 2**k - 1, got {n}")
        if self.max_size < n:
            raise ValueError("max_size must be at least initial_size")
        T.dtype_for(self.precision)
        parse_distribution(self.coef_distribution)


def lr_schedule(epoch, cfg):
    """Step decay: ``lr * gamma ** (epoch // step)``."""
    return cfg.lr * cfg.lr_gamma ** (epoch // cfg.lr_step_epochs)


def size_schedule(epoch, cfg):
    """Grid size, level count and batch size used during ``epoch``."""
    size, level, batch = cfg.initial_size, cfg.initial_level, cfg.initial_batch
    for _ in range(epoch // cfg.size_step):
        if 2 * size + 1 > cfg.max_size:
            break
        size = 2 * size + 1
        level += 1
        batch = max(batch // 2, cfg.min_batch)
    return size, level, max(batch, cfg.min_batch)


class AdamState:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update of ``params`` (a name -> array mapping) in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def residual_loss(tape, weights, spec, rhs, level):
    """Record ``mean_i ||rhs_i - A_i sol_i||^2`` for a batch of problems."""
    rhs = tape.constant(rhs) if not hasattr(rhs, "value") else rhs
    outs = setup_on_tape(tape, weights, tape.constant(spec.coef), level)
    sol = solve_on_tape(tape, weights, outs, rhs, level)
    r = tape.sub(rhs, operator_on_tape(tape, spec, sol))
    return tape.scale(tape.sumsq(r), 1.0 / spec.batch)


def sample_batch(cfg, size, batch, rng, dist=None):
    """One training batch: a batched ProblemSpec and white-noise rhs."""
    dtype = T.dtype_for(cfg.precision)
    dist = dist or parse_distribution(cfg.coef_distribution)
    coef = sample_coefficients(dist, size, batch, rng, cfg.re_limit, dtype)
    rhs = rng.standard_normal((batch, 1, size, size)).astype(dtype)
    return ProblemSpec(size, coef, re_limit=cfg.re_limit), rhs


def batch_seed(cfg, epoch, batch):
    return (cfg.seed, epoch, batch)


def _peak_bytes():
    # ru_maxrss is KiB on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


@dataclass
class TrainResult:
    weights: object
    history: list = field(default_factory=list)

    def epoch_mean_losses(self):
        out = {}
        for row in self.history:
            out.setdefault(row["epoch"], []).append(row["loss"])
        return {e: float(np.mean(v)) for e, v in out.items()}


def train(cfg, weights=None, on_batch=None):
    """Train from ``cfg``; returns a :class:`TrainResult` with a per-batch history."""
    dtype = T.dtype_for(cfg.precision)
    if weights is None:
        weights = init_weights(cfg.channels, seed=cfg.seed, dtype=dtype)
    else:
        weights = weights.astype(dtype)
    dist = parse_distribution(cfg.coef_distribution)
    state = AdamState(weights.params)
    history = []
    for epoch in range(cfg.epochs):
        size, level, batch = size_schedule(epoch, cfg)
        lr = lr_schedule(epoch, cfg)
        t0 = time.perf_counter()
        for b in range(cfg.batches_per_epoch):
            seed = batch_seed(cfg, epoch, b)
            rng = np.random.default_rng(seed)
            spec, rhs = sample_batch(cfg, size, batch, rng, dist)
            weights.zero_grad()
            tape = Tape()
            loss = residual_loss(tape, weights, spec, rhs, level)
            value = float(loss.value)
            if not math.isfinite(value) or value < 0:
                raise TrainingDiverged(
                    f"loss {value} at epoch {epoch} batch {b} (batch seed {seed})",
                    epoch, b, seed)
            tape.backward(loss)
            adam_step(weights.params, weights.grads, state, lr)
            row = dict(epoch=epoch, batch=b, loss=value, lr=lr, size=size, level=level,
                       batch_size=batch, seconds=time.perf_counter() - t0,
                       peak_bytes=_peak_bytes())
            history.append(row)
            if on_batch is not None:
                on_batch(row)
        logger.info("epoch %d size %d level %d: mean loss %.4g, %.1fs", epoch, size, level,
                    np.mean([r["loss"] for r in history[-cfg.batches_per_epoch:]]),
                    time.perf_counter() - t0)
    return TrainResult(weights, history)


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def config_fields():
    return [f.name for f in fields(TrainConfig)]
