"""Causal spatio-temporal encoder.

A frame sequence (T, V, 3) is embedded per joint, tagged with a sinusoidal
position code, and pushed through pre-norm blocks. Inside a block, queries,
keys and values each come from their own self-attention graph convolution
over joints, then attention runs along the time axis separately per joint,
under a causal mask. Because information only ever flows backward in time,
the latent at step t computed over the whole padded sequence equals the
latent computed from the prefix alone; that equivalence is what makes the
single-pass training cheap and is pinned down by the tests.

encode_step() is the streaming twin: it keeps per-block key/value caches and
processes one frame in O(t) so a live session never recomputes its past.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import CapacityError, ConfigError, ShapeError
from .graph import SAGCParams, fan_in_uniform, init_sagc, sagc
from .tensor import Tensor, layer_norm, matmul, no_grad, relu, softmax


def sinusoidal_pe(times, dim: int, base: float = 10000.0, dtype=np.float64) -> np.ndarray:
    """Interleaved sin/cos position code: channel 2i holds
    sin(t / base^{2i/dim}) and channel 2i+1 the matching cos.
    times may be any shape; one dim-sized vector is produced per entry.
    """
    if dim % 2:
        raise ConfigError(f"position code needs an even dim, got {dim}")
    t = np.asarray(times, dtype=dtype)
    exponents = np.arange(dim // 2, dtype=dtype) * (2.0 / dim)
    freqs = base ** (-exponents)
    angles = t[..., None] * freqs
    pe = np.empty(t.shape + (dim,), dtype=dtype)
    pe[..., 0::2] = np.sin(angles)
    pe[..., 1::2] = np.cos(angles)
    return pe


def causal_mask(length: int, dtype=np.float64) -> np.ndarray:
    """(T, T) additive mask: 0 where key index <= query index, -inf after."""
    allowed = np.tril(np.ones((length, length), dtype=bool))
    return np.where(allowed, 0.0, -np.inf).astype(dtype)


@dataclass
class EmbedParams:
    weight: Tensor  # (3, D)
    bias: Tensor    # (D,)
    joint: Tensor   # (V, D) learned per-joint offset

    def named(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}w", self.weight
        yield f"{prefix}b", self.bias
        yield f"{prefix}joint", self.joint


@dataclass
class EncoderBlockParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    q: SAGCParams
    k: SAGCParams
    v: SAGCParams
    out_proj: Tensor  # (D, D)
    ln2_gain: Tensor
    ln2_bias: Tensor
    mlp_w1: Tensor    # (D, 4D)
    mlp_b1: Tensor
    mlp_w2: Tensor    # (4D, D)
    mlp_b2: Tensor
    temporal_heads: int

    def named(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}ln1.g", self.ln1_gain
        yield f"{prefix}ln1.b", self.ln1_bias
        yield from self.q.named(f"{prefix}q.")
        yield from self.k.named(f"{prefix}k.")
        yield from self.v.named(f"{prefix}v.")
        yield f"{prefix}proj", self.out_proj
        yield f"{prefix}ln2.g", self.ln2_gain
        yield f"{prefix}ln2.b", self.ln2_bias
        yield f"{prefix}mlp.w1", self.mlp_w1
        yield f"{prefix}mlp.b1", self.mlp_b1
        yield f"{prefix}mlp.w2", self.mlp_w2
        yield f"{prefix}mlp.b2", self.mlp_b2


@dataclass
class CausalEncoderParams:
    embed: EmbedParams
    blocks: list[EncoderBlockParams] = field(default_factory=list)

    def named(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.embed.named(f"{prefix}embed.")
        for i, blk in enumerate(self.blocks):
            yield from blk.named(f"{prefix}block{i}.")


def init_embed(rng: np.random.Generator, num_joints: int, dim: int,
               dtype=np.float64) -> EmbedParams:
    """Linear weights fan-in uniform; the per-joint offset is uniform with
    bound 1/sqrt(D) so it starts on the same scale as the position code."""
    bound = 1.0 / math.sqrt(dim)
    return EmbedParams(
        weight=Tensor(fan_in_uniform(rng, 3, dim, dtype), requires_grad=True),
        bias=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
        joint=Tensor(rng.uniform(-bound, bound, size=(num_joints, dim)).astype(dtype),
                     requires_grad=True),
    )


def init_encoder_block(rng: np.random.Generator, adjacency: np.ndarray, dim: int,
                       graph_heads: int, temporal_heads: int,
                       dtype=np.float64) -> EncoderBlockParams:
    if dim % temporal_heads:
        raise ConfigError(f"temporal_heads {temporal_heads} must divide dim {dim}")
    mk_sagc = lambda: init_sagc(rng, adjacency, dim, dim, graph_heads, dtype=dtype)
    hidden = 4 * dim
    return EncoderBlockParams(
        ln1_gain=Tensor(np.ones(dim, dtype=dtype), requires_grad=True),
        ln1_bias=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
        q=mk_sagc(),
        k=mk_sagc(),
        v=mk_sagc(),
        out_proj=Tensor(fan_in_uniform(rng, dim, dim, dtype), requires_grad=True),
        ln2_gain=Tensor(np.ones(dim, dtype=dtype), requires_grad=True),
        ln2_bias=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
        mlp_w1=Tensor(fan_in_uniform(rng, dim, hidden, dtype), requires_grad=True),
        mlp_b1=Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
        mlp_w2=Tensor(fan_in_uniform(rng, hidden, dim, dtype), requires_grad=True),
        mlp_b2=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
        temporal_heads=temporal_heads,
    )


def init_encoder(rng: np.random.Generator, adjacency: np.ndarray, dim: int,
                 num_layers: int, graph_heads: int, temporal_heads: int,
                 dtype=np.float64) -> CausalEncoderParams:
    return CausalEncoderParams(
        embed=init_embed(rng, adjacency.shape[0], dim, dtype=dtype),
        blocks=[init_encoder_block(rng, adjacency, dim, graph_heads,
                                   temporal_heads, dtype=dtype)
                for _ in range(num_layers)],
    )


def embed(frames: Tensor, params: EmbedParams, start_time: int = 0) -> Tensor:
    """(..., T, V, 3) -> (..., T, V, D): per-joint linear map plus joint
    offset plus the position code for frames start_time..start_time+T-1.
    """
    if frames.ndim < 3 or frames.shape[-1] != 3:
        raise ShapeError(f"frames must be (..., T, V, 3), got {frames.shape}")
    dtype = params.weight.dtype
    t = frames.shape[-3]
    pe = sinusoidal_pe(np.arange(start_time, start_time + t), params.weight.shape[1],
                       dtype=dtype)
    h = matmul(frames, params.weight) + params.bias + params.joint
    return h + pe[:, None, :]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # (B, T, V, D) -> (B, V, heads, T, D // heads)
    b, t, v, d = x.shape
    x = x.swapaxes(1, 2).reshape((b, v, t, heads, d // heads))
    return x.swapaxes(2, 3)


def _merge_heads(x: Tensor) -> Tensor:
    # (B, V, heads, T, dh) -> (B, T, V, D)
    b, v, h, t, dh = x.shape
    return x.swapaxes(2, 3).reshape((b, v, t, h * dh)).swapaxes(1, 2)


def temporal_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                       mask: np.ndarray, attn_sink: list | None = None,
                       tag: str = "") -> Tensor:
    """Multi-head attention along the time axis, independently per joint.
    Inputs are (B, T, V, D); mask is an additive (T, T) array.
    """
    dh = q.shape[-1] // heads
    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    scores = matmul(qh, kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    probs = softmax(scores + mask, axis=-1)
    if attn_sink is not None:
        attn_sink.append((f"{tag}temporal", probs.data))
    return _merge_heads(matmul(probs, vh))


def encoder_block(h: Tensor, params: EncoderBlockParams, mask: np.ndarray,
                  attn_sink: list | None = None, tag: str = "") -> Tensor:
    """One pre-norm block: joint-mixing attention over time, then an MLP,
    each wrapped in a residual connection. h is (B, T, V, D).
    """
    normed = layer_norm(h, params.ln1_gain, params.ln1_bias)
    roles = {}
    for role, sagc_params in (("q", params.q), ("k", params.k), ("v", params.v)):
        sink = [] if attn_sink is not None else None
        roles[role] = sagc(normed, sagc_params, attn_sink=sink)
        if attn_sink is not None:
            for m, attn in enumerate(sink):
                attn_sink.append((f"{tag}{role}.joint.head{m}", attn.data))
    mixed = temporal_attention(roles["q"], roles["k"], roles["v"],
                               params.temporal_heads, mask, attn_sink, tag)
    h = h + matmul(mixed, params.out_proj)
    normed2 = layer_norm(h, params.ln2_gain, params.ln2_bias)
    grown = relu(matmul(normed2, params.mlp_w1) + params.mlp_b1)
    return h + matmul(grown, params.mlp_w2) + params.mlp_b2


def encode(frames, params: CausalEncoderParams, attn_sink: list | None = None) -> Tensor:
    """Encode (T, V, 3) or (B, T, V, 3) into causal latents of the same
    leading shape with feature dim D. Latent t only sees frames <= t.
    """
    x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames))
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ShapeError(f"frames must be (B, T, V, 3), got {frames.shape}")
    dtype = params.embed.weight.dtype
    if x.dtype != dtype:
        x = Tensor(x.data.astype(dtype), requires_grad=x.requires_grad)
    h = embed(x, params.embed)
    mask = causal_mask(x.shape[1], dtype=dtype)
    for i, blk in enumerate(params.blocks):
        h = encoder_block(h, blk, mask, attn_sink, tag=f"block{i}.")
    return h.reshape(h.shape[1:]) if squeeze else h


class StreamState:
    """Per-session key/value caches, one pair per block, plus the running
    frame count. Grows linearly with frames seen."""

    def __init__(self, num_blocks: int, limit: int | None = None):
        self.keys: list[list[np.ndarray]] = [[] for _ in range(num_blocks)]
        self.values: list[list[np.ndarray]] = [[] for _ in range(num_blocks)]
        self.frames_seen = 0
        self.limit = limit

    def __len__(self) -> int:
        return self.frames_seen


def encode_step(frame, params: CausalEncoderParams, state: StreamState) -> np.ndarray:
    """Push one (V, 3) frame through the encoder using cached history.

    Returns the (V, D) latent for this step. Work grows with the number of
    cached frames, never with recomputation of the past.
    """
    if state.limit is not None and state.frames_seen >= state.limit:
        raise CapacityError(
            f"stream already holds {state.frames_seen} frames (limit {state.limit})"
        )
    dtype = params.embed.weight.dtype
    arr = np.asarray(frame, dtype=dtype)
    if arr.shape != (params.embed.joint.shape[0], 3):
        raise ShapeError(
            f"frame must be ({params.embed.joint.shape[0]}, 3), got {arr.shape}"
        )
    t = state.frames_seen
    with no_grad():
        h = embed(Tensor(arr[None]), params.embed, start_time=t)[0]  # (V, D)
        for i, blk in enumerate(params.blocks):
            h = _stream_block(h, blk, state.keys[i], state.values[i])
    state.frames_seen = t + 1
    return h.data


def _stream_block(h: Tensor, params: EncoderBlockParams,
                  key_cache: list, value_cache: list) -> Tensor:
    normed = layer_norm(h, params.ln1_gain, params.ln1_bias)
    q = sagc(normed, params.q)
    k = sagc(normed, params.k)
    v = sagc(normed, params.v)
    key_cache.append(k.data)
    value_cache.append(v.data)

    heads = params.temporal_heads
    vjoints, d = q.shape
    dh = d // heads
    hist = len(key_cache)
    # (hist, V, D) caches -> (V, heads, hist, dh)
    ks = Tensor(np.stack(key_cache).reshape(hist, vjoints, heads, dh)
                .transpose(1, 2, 0, 3))
    vs = Tensor(np.stack(value_cache).reshape(hist, vjoints, heads, dh)
                .transpose(1, 2, 0, 3))
    qh = q.reshape((vjoints, heads, 1, dh))
    scores = matmul(qh, ks.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    probs = softmax(scores, axis=-1)  # attends to all cached steps: all are past
    mixed = matmul(probs, vs).reshape((vjoints, heads * dh))
    h = h + matmul(mixed, params.out_proj)
    normed2 = layer_norm(h, params.ln2_gain, params.ln2_bias)
    grown = relu(matmul(normed2, params.mlp_w1) + params.mlp_b1)
    return h + matmul(grown, params.mlp_w2) + params.mlp_b2
