"""Latent dynamics: a learned vector field and fixed-step ODE solvers.

The solvers are written against the autodiff Tensor, so backpropagation
differentiates straight through every stage evaluation (discretize first,
then optimize). Times may be one shared 1-D grid or a per-row grid, which
lets a whole batch of latents integrate from different base frames in one
vectorized call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .graph import SAGCParams, init_sagc, sagc
from .encoder import sinusoidal_pe
from .tensor import Tensor, stack

FieldFn = Callable[[Tensor, "float | np.ndarray"], Tensor]


@dataclass
class VectorFieldParams:
    """Two stacked joint-attention graph layers acting on the latent plus
    its time code."""

    layer1: SAGCParams
    layer2: SAGCParams

    def named(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        yield from self.layer1.named(f"{prefix}l1.")
        yield from self.layer2.named(f"{prefix}l2.")


def init_vector_field(rng: np.random.Generator, adjacency: np.ndarray, dim: int,
                      heads: int, dtype=np.float64,
                      gain: float = 0.1) -> VectorFieldParams:
    """Field weights start small so extrapolation begins near-constant.

    The field output is rectified (nonnegative derivative), so a unit-scale
    init feeds growth back into itself and training can run away; a small
    gain keeps integration contractive until the data pulls it elsewhere.
    """
    return VectorFieldParams(
        layer1=init_sagc(rng, adjacency, dim, dim, heads, dtype=dtype, gain=gain),
        layer2=init_sagc(rng, adjacency, dim, dim, heads, dtype=dtype, gain=gain),
    )


def vector_field(z: Tensor, t, params: VectorFieldParams) -> Tensor:
    """dZ/dt at latent z (..., V, D) and time t (scalar, or an array shaped
    like z's leading dims)."""
    dtype = params.layer1.weight[0].dtype
    pe = sinusoidal_pe(np.asarray(t, dtype=dtype), z.shape[-1], dtype=dtype)
    h = z + pe[..., None, :]
    return sagc(sagc(h, params.layer1), params.layer2)


def _widen(dt, z: Tensor):
    """Reshape a per-row step array so it broadcasts over (..., V, D),
    keeping the state's dtype."""
    arr = np.asarray(dt)
    if arr.ndim == 0:
        return float(arr)
    return arr.astype(z.dtype, copy=False).reshape(
        arr.shape + (1,) * (z.ndim - arr.ndim))


def ode_step(field: FieldFn, z: Tensor, t, dt, method: str = "rk4") -> Tensor:
    """Advance z from t by dt with one solver step.

    t and dt are scalars or arrays shaped like z's leading dims (per-row
    integration). Stage evaluations stay on the autodiff graph.
    """
    h = _widen(dt, z)
    if method == "euler":
        return z + field(z, t) * h
    if method == "midpoint":
        k1 = field(z, t)
        k2 = field(z + k1 * (h / 2), t + dt / 2)
        return z + k2 * h
    if method == "rk4":
        k1 = field(z, t)
        k2 = field(z + k1 * (h / 2), t + dt / 2)
        k3 = field(z + k2 * (h / 2), t + dt / 2)
        k4 = field(z + k3 * h, t + dt)
        return z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6)
    raise ConfigError(f"unknown solver {method!r}; use euler, midpoint, or rk4")


def ode_solve(field: FieldFn, z0, times, method: str = "rk4",
              substeps: int = 1) -> Tensor:
    """Integrate from times[0] through each later time.

    times is (K,) shared across rows, or (K, *lead) with one schedule per
    row of z0 (lead = z0.shape[:-2]). Returns a (K, *z0.shape) Tensor whose
    slice 0 is exactly z0. Each interval is cut into `substeps` equal
    pieces.
    """
    if substeps < 1:
        raise ConfigError(f"substeps must be >= 1, got {substeps}")
    z0 = z0 if isinstance(z0, Tensor) else Tensor(z0)
    if z0.ndim < 2:
        raise ShapeError(f"state must be (..., V, D), got {z0.shape}")
    times = np.asarray(times, dtype=np.float64)
    if times.ndim == 0 or times.shape[0] < 1:
        raise ContractError("times must hold at least the base time")
    if times.ndim > 1 and times.shape[1:] != z0.shape[:-2]:
        raise ShapeError(
            f"per-row times {times.shape} do not match state rows {z0.shape[:-2]}"
        )

    states = [z0]
    z = z0
    for k in range(times.shape[0] - 1):
        t0, t1 = times[k], times[k + 1]
        micro = (t1 - t0) / substeps
        for s in range(substeps):
            z = ode_step(field, z, t0 + micro * s, micro, method)
        states.append(z)
    return stack(states, axis=0)
