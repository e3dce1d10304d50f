"""Output heads and training losses.

The coordinate head decodes an (extrapolated) latent back to joint
positions through a fixed-graph convolution. The class head looks at the
current latent together with its forecast trajectory, mixes joints with
attention, pools, and emits logits.

Losses are a three-part composite: classification cross-entropy at every
frame, a coordinate forecasting term, and a latent consistency term. The
forecast-style losses take each (base frame, offset) pair's mean squared
error over all its entries, then average over the K valid pairs; with T
frames and horizon N, K = N*T - N*(N+1)/2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import ContractError, ShapeError
from .graph import GCNParams, SAGCParams, fan_in_uniform, gcn, init_gcn, init_sagc, sagc
from .tensor import Tensor, concat, log, matmul, softmax, tmean, tsum


@dataclass
class PredHeadParams:
    """Latent -> joint coordinates."""

    mix1: GCNParams          # fixed-adjacency graph conv D -> D
    mix2: GCNParams          # second fixed-adjacency graph conv D -> D
    out_w: Tensor            # (D, 3)
    out_b: Tensor            # (3,)

    def named(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.mix1.named(f"{prefix}mix1.")
        yield from self.mix2.named(f"{prefix}mix2.")
        yield f"{prefix}out.w", self.out_w
        yield f"{prefix}out.b", self.out_b


@dataclass
class ClassHeadParams:
    """[latent, forecasts] -> class logits."""

    reduce: SAGCParams       # (N+1)*D -> D
    refine: SAGCParams       # D -> D
    out_w: Tensor            # (D, C)
    out_b: Tensor            # (C,)

    def named(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.reduce.named(f"{prefix}reduce.")
        yield from self.refine.named(f"{prefix}refine.")
        yield f"{prefix}out.w", self.out_w
        yield f"{prefix}out.b", self.out_b


def init_pred_head(rng: np.random.Generator, adjacency: np.ndarray, dim: int,
                   heads: int, dtype=np.float64) -> PredHeadParams:
    return PredHeadParams(
        mix1=init_gcn(rng, adjacency, dim, dim, heads, dtype=dtype),
        mix2=init_gcn(rng, adjacency, dim, dim, heads, dtype=dtype),
        out_w=Tensor(fan_in_uniform(rng, dim, 3, dtype), requires_grad=True),
        out_b=Tensor(np.zeros(3, dtype=dtype), requires_grad=True),
    )


def init_class_head(rng: np.random.Generator, adjacency: np.ndarray, dim: int,
                    heads: int, future_steps: int, num_classes: int,
                    dtype=np.float64) -> ClassHeadParams:
    return ClassHeadParams(
        reduce=init_sagc(rng, adjacency, (future_steps + 1) * dim, dim, heads, dtype=dtype),
        refine=init_sagc(rng, adjacency, dim, dim, heads, dtype=dtype),
        out_w=Tensor(fan_in_uniform(rng, dim, num_classes, dtype), requires_grad=True),
        out_b=Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True),
    )


def pred_head(z: Tensor, params: PredHeadParams) -> Tensor:
    """(..., V, D) latent -> (..., V, 3) coordinates via two graph convs
    and a linear readout (no final activation: coordinates are unbounded)."""
    return matmul(gcn(gcn(z, params.mix1), params.mix2), params.out_w) + params.out_b


def class_head(z_now: Tensor, z_future: "Tensor | None",
               params: ClassHeadParams) -> Tensor:
    """Logits from the current latent and its forecasts.

    z_now is (..., V, D); z_future is (N, ..., V, D) or None when the model
    runs without a forecaster. Feature dims are concatenated per joint.
    """
    pieces = [z_now]
    if z_future is not None:
        n = z_future.shape[0]
        pieces.extend(z_future[i] for i in range(n))
    expected = params.reduce.weight[0].shape[0]
    joined = concat(pieces, axis=-1) if len(pieces) > 1 else z_now
    if joined.shape[-1] != expected:
        raise ShapeError(
            f"class head expects feature dim {expected}, got {joined.shape[-1]}"
        )
    h = sagc(sagc(joined, params.reduce), params.refine)
    pooled = tmean(h, axis=-2)
    lead = pooled.shape[:-1]
    rows = pooled.reshape(lead + (1, h.shape[-1]))
    logits = matmul(rows, params.out_w).reshape(lead + (params.out_w.shape[1],))
    return logits + params.out_b


def smooth_labels(labels, num_classes: int, smoothing: float = 0.0) -> np.ndarray:
    """One-hot targets with optional label smoothing. labels is an int or an
    int array; output gains a trailing class axis."""
    arr = np.asarray(labels)
    if np.any(arr < 0) or np.any(arr >= num_classes):
        raise ContractError(f"labels must lie in [0, {num_classes}), got {arr}")
    hot = np.eye(num_classes)[arr]
    if smoothing:
        hot = (1.0 - smoothing) * hot + smoothing / num_classes
    return hot


def loss_cls(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-frame cross-entropy, averaged over frames AND classes (1/(T*C)),
    then over any batch dims. logits is (..., T, C); targets matches."""
    if logits.shape != np.shape(targets):
        raise ShapeError(f"logits {logits.shape} vs targets {np.shape(targets)}")
    t, c = logits.shape[-2], logits.shape[-1]
    probs = softmax(logits, axis=-1)
    picked = tsum(log(probs, floor=1e-12) * np.asarray(targets, dtype=logits.dtype),
                  axis=(-1, -2))
    per_sequence = picked * (-1.0 / (t * c))
    return tmean(per_sequence) if per_sequence.ndim else per_sequence


def pair_count(num_frames: int, horizon: int) -> int:
    """Number of (base, offset) pairs with base+offset inside the sequence."""
    n = min(horizon, num_frames - 1)
    return n * num_frames - n * (n + 1) // 2


def _require_complete(pairs, total: int, horizon: int, what: str) -> None:
    """Every (t, n) with n in 1..horizon and t+n < total must be present."""
    expected = {(t, n) for n in range(1, horizon + 1)
                for t in range(total - n)}
    missing = expected - set(pairs)
    if missing:
        raise ContractError(
            f"{what} is missing forecast pair {min(missing)} "
            f"({len(missing)} of {len(expected)} absent)")
    extra = set(pairs) - expected
    if extra:
        raise ContractError(
            f"{what} holds pair {min(extra)} outside horizon {horizon}")


def loss_pred(predictions: Mapping[tuple[int, int], Tensor], frames,
              horizon: int | None = None) -> Tensor:
    """Forecast coordinate loss: each pair's MSE over its V*3 entries,
    averaged over pairs.

    predictions maps (t, n) with n >= 1 to an (V, 3) estimate of frame t+n,
    frames is the observed (T, V, 3). A horizon makes the pair set's
    completeness part of the contract. Empty predictions give loss 0.
    """
    frames = np.asarray(frames)
    if horizon is not None:
        _require_complete(predictions, frames.shape[0], horizon, "predictions")
    entries = frames.shape[1] * frames.shape[2]
    total = None
    for (t, n), guess in predictions.items():
        if n < 1 or t < 0 or t + n >= frames.shape[0]:
            raise ContractError(f"pair (t={t}, n={n}) has no observed target")
        diff = guess - frames[t + n]
        term = tsum(diff * diff)
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros(()))
    return total * (1.0 / (len(predictions) * entries))


def loss_feat(forecasts: Mapping[tuple[int, int], Tensor], latents: Tensor,
              stop_grad_target: bool = False,
              horizon: int | None = None) -> Tensor:
    """Latent consistency loss: each pair's MSE over its V*D entries,
    averaged over pairs.

    forecasts maps (t, n) to an (V, D) estimate of the encoder latent at
    t+n; latents is the encoder output (T, V, D). By default gradients flow
    into both branches; stop_grad_target detaches the encoder side so it is
    not dragged toward the forecasts.
    """
    if horizon is not None:
        _require_complete(forecasts, latents.shape[0], horizon, "forecasts")
    entries = latents.shape[1] * latents.shape[2]
    total = None
    for (t, n), guess in forecasts.items():
        if n < 1 or t < 0 or t + n >= latents.shape[0]:
            raise ContractError(f"pair (t={t}, n={n}) has no target latent")
        target = latents[t + n]
        if stop_grad_target:
            target = target.detach()
        diff = guess - target
        term = tsum(diff * diff)
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros(()))
    return total * (1.0 / (len(forecasts) * entries))


@dataclass
class LossBundle:
    total: float
    cls: float
    pred: float
    feat: float
    pairs: int


def total_loss(cls_term: Tensor, pred_term: Tensor, feat_term: Tensor,
               lambda_pred: float, lambda_feat: float,
               pairs: int = 0) -> tuple[Tensor, LossBundle]:
    loss = cls_term + pred_term * lambda_pred + feat_term * lambda_feat
    bundle = LossBundle(
        total=loss.item(),
        cls=cls_term.item(),
        pred=pred_term.item(),
        feat=feat_term.item(),
        pairs=pairs,
    )
    return loss, bundle
