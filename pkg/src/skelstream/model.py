"""The full online recognizer: causal encoder, latent forecaster, heads.

Training runs one batched pass: every frame's latent is treated as a base
state and extrapolated future_steps ahead in a single vectorized solve (the
causal encoder makes each latent a valid prefix summary, so one pass covers
every observation length at once). Streaming inference reuses the same
parameters through a per-session key/value cache and classifies after each
pushed frame.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .config import ModelConfig
from .encoder import (CausalEncoderParams, StreamState, encode, encode_step,
                      init_encoder)
from .errors import ShapeError
from .graph import star_adjacency
from .heads import (ClassHeadParams, PredHeadParams, class_head,
                    init_class_head, init_pred_head, pred_head)
from .odeflow import VectorFieldParams, init_vector_field, ode_solve, vector_field
from .tensor import Tensor, no_grad, stack


def build_adjacency(config: ModelConfig) -> np.ndarray:
    """The raw joint graph: explicit edge list if given, else a star."""
    if config.edges is None:
        return star_adjacency(config.num_joints)
    adj = np.zeros((config.num_joints, config.num_joints))
    for i, j in config.edges:
        adj[i, j] = 1.0
        adj[j, i] = 1.0
    return adj


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: CausalEncoderParams
    field: VectorFieldParams
    pred: PredHeadParams
    cls: ClassHeadParams

    def named(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.encoder.named(f"{prefix}enc.")
        yield from self.field.named(f"{prefix}field.")
        yield from self.pred.named(f"{prefix}pred.")
        yield from self.cls.named(f"{prefix}cls.")

    def trainable(self) -> Iterator[tuple[str, Tensor]]:
        for name, t in self.named():
            if t.requires_grad:
                yield name, t

    def zero_grads(self) -> None:
        for _, t in self.named():
            t.grad = None

    @property
    def dtype(self):
        return self.encoder.embed.weight.dtype


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float64) -> ModelParams:
    config.validate()
    rng = np.random.default_rng(seed)
    adj = build_adjacency(config)
    return ModelParams(
        config=config,
        encoder=init_encoder(rng, adj, config.hidden_dim, config.num_layers,
                             config.graph_heads, config.temporal_heads, dtype=dtype),
        field=init_vector_field(rng, adj, config.hidden_dim, config.graph_heads,
                                dtype=dtype),
        pred=init_pred_head(rng, adj, config.hidden_dim, config.graph_heads,
                            dtype=dtype),
        cls=init_class_head(rng, adj, config.hidden_dim, config.graph_heads,
                            config.future_steps, config.num_classes, dtype=dtype),
    )


def count_parameters(params: ModelParams) -> int:
    return sum(t.size for _, t in params.trainable())


def extrapolate(params: ModelParams, latents: Tensor, base_times) -> Tensor:
    """Forecast latents future_steps ahead.

    latents is (..., V, D) with one base state per row; base_times is a
    scalar or an array shaped like the leading dims. Returns
    (future_steps + 1, ..., V, D); slice 0 is the input itself.
    """
    cfg = params.config
    steps = cfg.future_steps
    if steps == 0:
        return stack([latents], axis=0)
    if cfg.predictor == "none":
        return stack([latents] * (steps + 1), axis=0)
    offsets = np.arange(steps + 1, dtype=np.float64)
    if cfg.pe_relative:
        times = offsets  # every row integrates on its own 0..N clock
    else:
        base = np.asarray(base_times, dtype=np.float64)
        times = offsets.reshape((steps + 1,) + (1,) * base.ndim) + base
    field = lambda z, t: vector_field(z, t, params.field)
    return ode_solve(field, latents, times, method=cfg.solver,
                     substeps=cfg.substeps)


@dataclass
class ModelOutput:
    latents: Tensor          # (B, T, V, D)
    future: Tensor | None    # (N, B, T, V, D) forecast latents, or None
    logits: Tensor           # (B, T, C)
    coords: Tensor | None    # (N, B, T, V, 3) decoded forecasts, or None


def forward(params: ModelParams, frames, decode_coords: bool = True,
            attn_sink: list | None = None) -> ModelOutput:
    """Full training-style pass over (B, T, V, 3) (or unbatched (T, V, 3)).

    Every frame acts as a base: its latent is forecast future_steps ahead,
    decoded to coordinates (optionally), and classified together with its
    forecasts.
    """
    x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames))
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ShapeError(f"frames must be (B, T, V, 3), got {np.shape(frames)}")
    b, t = x.shape[0], x.shape[1]

    latents = encode(x, params.encoder, attn_sink=attn_sink)
    base_times = np.broadcast_to(np.arange(t, dtype=np.float64), (b, t))
    path = extrapolate(params, latents, base_times)
    n = params.config.future_steps
    future = path[1:] if n else None
    coords = pred_head(future, params.pred) if (decode_coords and n) else None
    logits = class_head(latents, future, params.cls)
    return ModelOutput(latents=latents, future=future, logits=logits, coords=coords)


@dataclass
class StreamResult:
    frame_index: int
    latent: np.ndarray       # (V, D)
    logits: np.ndarray       # (C,)
    probs: np.ndarray        # (C,)
    label: int


class StreamSession:
    """Online inference over one skeleton stream.

    Frames are pushed one at a time (already in model coordinates); each
    push costs O(frames seen so far) and yields the classification after
    that frame. The coordinate decoder never runs here.
    """

    def __init__(self, params: ModelParams, limit: int | None = None):
        self.params = params
        if limit is None:
            limit = params.config.max_frames
        self.state = StreamState(len(params.encoder.blocks), limit=limit)

    @property
    def frames_seen(self) -> int:
        return self.state.frames_seen

    def push(self, frame) -> StreamResult:
        params = self.params
        t = self.state.frames_seen
        with no_grad():
            z = encode_step(frame, params.encoder, self.state)  # (V, D)
            zt = Tensor(z)
            path = extrapolate(params, zt, float(t))
            future = path[1:] if params.config.future_steps else None
            logits = class_head(zt, future, params.cls).data
        shifted = logits - logits.max()
        weights = np.exp(shifted)
        probs = weights / weights.sum()
        return StreamResult(
            frame_index=t,
            latent=z,
            logits=logits,
            probs=probs,
            label=int(np.argmax(logits)),
        )


def classify_prefixes(params: ModelParams, frames) -> np.ndarray:
    """Per-frame logits (T, C) for one (T, V, 3) sequence via the batch path."""
    out = forward(params, frames, decode_coords=False)
    return out.logits.data[0]


def stream_prefix_logits(params: ModelParams, frames) -> np.ndarray:
    """Per-frame logits (T, C) for one (T, V, 3) sequence via the stream path."""
    frames = np.asarray(frames)
    session = StreamSession(params, limit=frames.shape[0])
    return np.stack([session.push(f).logits for f in frames], axis=0)


def replace_config(params: ModelParams, **changes) -> ModelParams:
    """A shallow copy of params with config fields overridden (e.g. a
    different solver at inference time)."""
    new_cfg = dataclasses.replace(params.config, **changes).validate()
    return dataclasses.replace(params, config=new_cfg)
