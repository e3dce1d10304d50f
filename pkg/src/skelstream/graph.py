"""Skeleton graphs and spatial layers that mix information across joints.

Two layer flavors share one computation pattern:

  gcn:  relu( sum_m  A_m @ (H @ W_m) )           fixed mixing matrices
  sagc: relu( sum_m (A_m * S_m(H)) @ (H @ W_m) ) mixing modulated by
                                                  self-attention over joints

where S_m(H) = softmax(H Wk_m (H Wq_m)^T / sqrt(d)). With attention
disabled, sagc degenerates to gcn exactly (same association order, same
head summation order), which the tests pin down bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, matmul, mul, relu, softmax


def star_adjacency(num_joints: int) -> np.ndarray:
    """Adjacency of a star skeleton: joint 0 is the root, every other joint
    hangs off it. No self loops.
    """
    if num_joints < 2:
        raise ConfigError(f"a star needs at least 2 joints, got {num_joints}")
    adj = np.zeros((num_joints, num_joints))
    adj[0, 1:] = 1.0
    adj[1:, 0] = 1.0
    return adj


def normalize_adjacency(adj: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Symmetric degree normalization with self loops:
    D^{-1/2} (A + I) D^{-1/2}, D the degree matrix of A + I.
    """
    adj = np.asarray(adj, dtype=dtype)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    if np.any(adj < 0):
        raise ContractError("adjacency entries must be nonnegative")
    if not np.array_equal(adj, adj.T):
        raise ContractError("adjacency must be symmetric")
    looped = adj + np.eye(adj.shape[0], dtype=dtype)
    inv_sqrt = 1.0 / np.sqrt(looped.sum(axis=1))
    return inv_sqrt[:, None] * looped * inv_sqrt[None, :]


def fan_in_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   dtype, gain: float = 1.0) -> np.ndarray:
    """Weights from U(-b, b) with b = gain * sqrt(3 / fan_in), so the entry
    variance is gain^2 / fan_in."""
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


@dataclass
class GCNParams:
    """Per-head mixing matrices (not trained) and feature weights."""

    adjacency: list[Tensor]
    weight: list[Tensor]

    @property
    def num_heads(self) -> int:
        return len(self.weight)

    def named(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for m, (a, w) in enumerate(zip(self.adjacency, self.weight)):
            yield f"{prefix}adj{m}", a
            yield f"{prefix}w{m}", w


@dataclass
class SAGCParams:
    """Learnable per-head mixing matrices, feature weights, and the key /
    query projections driving joint self-attention."""

    adjacency: list[Tensor]
    weight: list[Tensor]
    wq: list[Tensor]
    wk: list[Tensor]

    @property
    def num_heads(self) -> int:
        return len(self.weight)

    def named(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for m in range(self.num_heads):
            yield f"{prefix}adj{m}", self.adjacency[m]
            yield f"{prefix}w{m}", self.weight[m]
            yield f"{prefix}wq{m}", self.wq[m]
            yield f"{prefix}wk{m}", self.wk[m]


def init_gcn(rng: np.random.Generator, base_adjacency: np.ndarray,
             d_in: int, d_out: int, heads: int, dtype=np.float64,
             gain: float = 1.0) -> GCNParams:
    """Heads share the normalized skeleton adjacency; it stays fixed."""
    norm = normalize_adjacency(base_adjacency, dtype=dtype)
    return GCNParams(
        adjacency=[Tensor(norm.copy()) for _ in range(heads)],
        weight=[Tensor(fan_in_uniform(rng, d_in, d_out, dtype, gain),
                       requires_grad=True) for _ in range(heads)],
    )


def init_sagc(rng: np.random.Generator, base_adjacency: np.ndarray,
              d_in: int, d_out: int, heads: int, dtype=np.float64,
              gain: float = 1.0) -> SAGCParams:
    """Mixing matrices start at the normalized adjacency and are trained.
    Attention projections map d_in to d_out // heads per head. gain scales
    the weight init; small gains start the layer near zero, which keeps
    modules that feed back into themselves (the ODE field) well behaved
    early in training.
    """
    if d_out % heads != 0:
        raise ConfigError(f"output dim {d_out} not divisible by {heads} heads")
    d_attn = d_out // heads
    norm = normalize_adjacency(base_adjacency, dtype=dtype)
    return SAGCParams(
        adjacency=[Tensor(norm.copy(), requires_grad=True) for _ in range(heads)],
        weight=[Tensor(fan_in_uniform(rng, d_in, d_out, dtype, gain),
                       requires_grad=True) for _ in range(heads)],
        wq=[Tensor(fan_in_uniform(rng, d_in, d_attn, dtype, gain),
                   requires_grad=True) for _ in range(heads)],
        wk=[Tensor(fan_in_uniform(rng, d_in, d_attn, dtype, gain),
                   requires_grad=True) for _ in range(heads)],
    )


def _check_joint_features(h: Tensor, adjacency: Tensor, weight: Tensor) -> None:
    v = adjacency.shape[0]
    if h.ndim < 2:
        raise ShapeError(f"joint features need shape (..., V, D), got {h.shape}")
    if h.shape[-2] != v:
        raise ShapeError(f"feature joint axis {h.shape[-2]} != graph size {v}")
    if h.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"feature dim {h.shape[-1]} != weight input dim {weight.shape[0]}"
        )


def gcn(h: Tensor, params: GCNParams) -> Tensor:
    """Graph convolution over the joint axis; h is (..., V, D_in)."""
    out = None
    for m in range(params.num_heads):
        _check_joint_features(h, params.adjacency[m], params.weight[m])
        term = matmul(params.adjacency[m], matmul(h, params.weight[m]))
        out = term if out is None else out + term
    return relu(out)


def sagc(h: Tensor, params: SAGCParams, attend: bool = True,
         attn_sink: list | None = None) -> Tensor:
    """Self-attention graph convolution over the joint axis.

    With attend=False the attention branch is skipped and the layer
    computes exactly what gcn() would with the same matrices. attn_sink,
    if given, receives one attention Tensor (..., V, V) per head.
    """
    out = None
    for m in range(params.num_heads):
        _check_joint_features(h, params.adjacency[m], params.weight[m])
        hw = matmul(h, params.weight[m])
        if attend:
            keys = matmul(h, params.wk[m])
            queries = matmul(h, params.wq[m])
            d_attn = params.wq[m].shape[1]
            scores = matmul(keys, queries.swapaxes(-1, -2)) * (1.0 / math.sqrt(d_attn))
            attn = softmax(scores, axis=-1)
            if attn_sink is not None:
                attn_sink.append(attn)
            mixing = mul(params.adjacency[m], attn)
        else:
            mixing = params.adjacency[m]
        term = matmul(mixing, hw)
        out = term if out is None else out + term
    return relu(out)
