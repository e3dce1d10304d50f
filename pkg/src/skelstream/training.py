"""SGD training of the full model on fixed-length sequence batches.

One optimizer step runs the single-pass forward (every frame forecast from
its own latent), assembles the composite loss, and backpropagates through
encoder, solver stages and heads together. The forecast losses here are the
batched twins of the per-pair forms in heads.py; a test pins their
equality.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .errors import (ConfigError, ContractError, DivergenceError,
                     MaskingError, ShapeError)
from .heads import LossBundle, loss_cls, pair_count, smooth_labels, total_loss
from .model import ModelOutput, ModelParams, forward
from .tensor import Tensor, tsum


def forecast_losses(output: ModelOutput, frames: np.ndarray,
                    stop_grad_target: bool = False) -> tuple[Tensor, Tensor, int]:
    """Batched coordinate and latent forecast losses.

    Each (sequence, base frame, offset) triple contributes the mean squared
    error over its V*3 coordinates (resp. V*D latent entries); triples whose
    target frame was never observed are skipped. Returns (coordinate loss,
    latent loss, pairs per sequence).
    """
    b, t = frames.shape[0], frames.shape[1]
    if output.coords is None:
        zero = Tensor(np.zeros((), dtype=frames.dtype))
        return zero, zero, 0
    n_max = output.coords.shape[0]
    pairs = pair_count(t, n_max)
    if pairs == 0:
        zero = Tensor(np.zeros((), dtype=frames.dtype))
        return zero, zero, 0

    pred_total = None
    feat_total = None
    for n in range(1, min(n_max, t - 1) + 1):
        window = (n - 1, slice(None), slice(0, t - n))
        cdiff = output.coords[window] - frames[:, n:]
        pterm = tsum(cdiff * cdiff)
        pred_total = pterm if pred_total is None else pred_total + pterm

        target = output.latents[(slice(None), slice(n, t))]
        if stop_grad_target:
            target = target.detach()
        zdiff = output.future[window] - target
        fterm = tsum(zdiff * zdiff)
        feat_total = fterm if feat_total is None else feat_total + fterm

    coord_entries = frames.shape[2] * frames.shape[3]
    feat_entries = output.latents.shape[2] * output.latents.shape[3]
    return (pred_total * (1.0 / (b * pairs * coord_entries)),
            feat_total * (1.0 / (b * pairs * feat_entries)), pairs)


def batch_loss(params: ModelParams, frames: np.ndarray, targets: np.ndarray,
               cfg: TrainConfig) -> tuple[Tensor, LossBundle]:
    """Composite loss for one (B, T, V, 3) batch with (B, T, C) targets."""
    needs_coords = cfg.lambda_pred > 0 or cfg.lambda_feat > 0
    output = forward(params, frames, decode_coords=needs_coords)
    cls_term = loss_cls(output.logits, targets)
    if needs_coords:
        pred_term, feat_term, pairs = forecast_losses(
            output, frames, params.config.stop_grad_feat_target)
    else:
        zero = Tensor(np.zeros((), dtype=params.dtype))
        pred_term, feat_term, pairs = zero, zero, 0
    return total_loss(cls_term, pred_term, feat_term,
                      cfg.lambda_pred, cfg.lambda_feat, pairs)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: the base rate shrinks by decay_factor at each
    milestone epoch."""
    drops = sum(1 for e in cfg.decay_epochs if epoch >= e)
    return cfg.lr * cfg.decay_factor**drops


def sgd_step(named_params, velocity: dict, lr: float,
             momentum: float, weight_decay: float) -> None:
    """Classic momentum update; weight decay enters through the gradient.

    named_params is an iterable of (name, Tensor); velocity buffers are
    keyed by name and created on first touch.
    """
    for name, t in named_params:
        if t.grad is None:
            continue
        g = t.grad
        if weight_decay:
            g = g + weight_decay * t.data
        v = velocity.get(name)
        v = g if v is None else momentum * v + g
        velocity[name] = v
        t.data = t.data - lr * v


@dataclass
class EpochStats:
    epoch: int
    loss: float
    cls: float
    pred: float
    feat: float
    lr: float
    seconds: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochStats] = field(default_factory=list)
    velocity: dict = field(default_factory=dict)
    rng: np.random.Generator | None = None
    epochs_run: int = 0


def train(params: ModelParams, frames: np.ndarray, labels: np.ndarray,
          cfg: TrainConfig, *, start_epoch: int = 0, epochs: int | None = None,
          rng: np.random.Generator | None = None, velocity: dict | None = None,
          on_epoch=None) -> TrainResult:
    """Run SGD epochs, mutating params in place.

    start_epoch / rng / velocity allow exact resumption: a run saved after k
    epochs and continued reproduces the uninterrupted run bitwise. Raises
    DivergenceError the moment the loss stops being finite.
    """
    cfg.validate()
    frames = np.asarray(frames)
    labels = np.asarray(labels)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ShapeError(f"frames must be (B, T, V, 3), got {frames.shape}")
    if labels.shape != (frames.shape[0],):
        raise ShapeError(f"labels must be ({frames.shape[0]},), got {labels.shape}")
    if not np.all(np.isfinite(frames)):
        raise ContractError("training frames contain non-finite values")
    for name, t in params.trainable():
        if not np.all(np.isfinite(t.data)):
            raise ContractError(f"parameter {name} is non-finite at entry")
    num_classes = params.config.num_classes
    if frames.shape[0] < 1:
        raise ConfigError("empty training set")

    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if velocity is None:
        velocity = {}
    frames = frames.astype(params.dtype, copy=False)
    hot = smooth_labels(labels, num_classes, cfg.label_smoothing)
    targets = np.broadcast_to(hot[:, None, :],
                              (frames.shape[0], frames.shape[1], num_classes))
    targets = np.ascontiguousarray(targets, dtype=params.dtype)

    last_epoch = cfg.max_epochs if epochs is None else min(cfg.max_epochs,
                                                           start_epoch + epochs)
    result = TrainResult(params=params, velocity=velocity, rng=rng)
    size = frames.shape[0]
    trainables = list(params.trainable())
    for epoch in range(start_epoch, last_epoch):
        tick = time.monotonic()
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(size)
        sums = np.zeros(4)
        batches = 0
        for lo in range(0, size, cfg.batch_size):
            pick = order[lo:lo + cfg.batch_size]
            try:
                loss, bundle = batch_loss(params, frames[pick], targets[pick], cfg)
            except (ContractError, MaskingError) as exc:
                # inputs and initial weights are validated finite, so a
                # softmax input violation or fully masked attention row mid
                # training can only come from activations overflowing
                worst = max(np.abs(t.data).max() for _, t in trainables)
                raise DivergenceError(
                    f"forward pass overflowed at epoch {epoch} "
                    f"(largest weight {worst:.2e})"
                ) from exc
            if not np.isfinite(bundle.total):
                raise DivergenceError(
                    f"non-finite loss {bundle.total} at epoch {epoch}"
                )
            params.zero_grads()
            loss.backward()
            sgd_step(trainables, velocity, lr, cfg.momentum, cfg.weight_decay)
            for name, t in trainables:
                if not np.all(np.isfinite(t.data)):
                    raise DivergenceError(
                        f"parameter {name} became non-finite at epoch {epoch}"
                    )
            sums += (bundle.total, bundle.cls, bundle.pred, bundle.feat)
            batches += 1
        stats = EpochStats(
            epoch=epoch,
            loss=sums[0] / batches,
            cls=sums[1] / batches,
            pred=sums[2] / batches,
            feat=sums[3] / batches,
            lr=lr,
            seconds=time.monotonic() - tick,
        )
        result.history.append(stats)
        result.epochs_run = epoch + 1
        if on_epoch is not None:
            on_epoch(stats)
    return result
