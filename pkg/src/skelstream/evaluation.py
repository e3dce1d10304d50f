"""Early-recognition evaluation: accuracy as a function of how much of the
sequence has been observed, and the area under that curve.

A model is scored at a grid of observation ratios; at ratio r it sees the
first ceil(r * T) frames and must commit to a label. The AUC is the
trapezoidal integral of accuracy over the grid, normalized by the grid
span, so a model that is always right scores 1 regardless of grid.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .model import ModelParams, StreamSession, forward


def prefix_length(ratio: float, total: int) -> int:
    """Frames visible at an observation ratio: ceil(r * T), at least 1."""
    if not 0.0 < ratio <= 1.0:
        raise ContractError(f"observation ratio must be in (0, 1], got {ratio}")
    if total < 1:
        raise ContractError(f"sequence length must be >= 1, got {total}")
    return min(total, max(1, int(np.ceil(ratio * total))))


def ratio_grid(step: float = 0.1) -> np.ndarray:
    """Evenly spaced ratios step, 2*step, ..., 1.0."""
    if not 0.0 < step <= 1.0:
        raise ContractError(f"ratio step must be in (0, 1], got {step}")
    count = int(round(1.0 / step))
    grid = np.linspace(step, count * step, count)
    return np.clip(grid, None, 1.0)


def predict_at_ratio(params: ModelParams, frames: np.ndarray,
                     ratio: float) -> np.ndarray:
    """Labels for a (B, T, V, 3) batch after observing the ratio prefix."""
    if frames.ndim != 4:
        raise ShapeError(f"frames must be (B, T, V, 3), got {frames.shape}")
    cut = prefix_length(ratio, frames.shape[1])
    out = forward(params, frames[:, :cut], decode_coords=False)
    return np.argmax(out.logits.data[:, -1], axis=-1)


def observation_auc(ratios: np.ndarray, accuracies: np.ndarray) -> float:
    """Trapezoidal area under accuracy-vs-ratio, normalized by the span."""
    ratios = np.asarray(ratios, dtype=np.float64)
    accuracies = np.asarray(accuracies, dtype=np.float64)
    if ratios.shape != accuracies.shape or ratios.size < 2:
        raise ShapeError("need matching ratio/accuracy arrays with >= 2 points")
    span = ratios[-1] - ratios[0]
    if span <= 0:
        raise ContractError("ratios must be increasing")
    return float(np.trapezoid(accuracies, ratios) / span)


@dataclass
class EvalReport:
    ratios: np.ndarray
    accuracies: np.ndarray
    auc: float

    def accuracy_at(self, ratio: float) -> float:
        idx = int(np.argmin(np.abs(self.ratios - ratio)))
        if abs(self.ratios[idx] - ratio) > 1e-9:
            raise ContractError(f"ratio {ratio} not on the evaluated grid")
        return float(self.accuracies[idx])


def evaluate_ratios(params: ModelParams, frames: np.ndarray, labels: np.ndarray,
                    step: float = 0.1) -> EvalReport:
    """Accuracy across the ratio grid plus the normalized AUC."""
    labels = np.asarray(labels)
    grid = ratio_grid(step)
    accs = np.empty_like(grid)
    for i, r in enumerate(grid):
        pred = predict_at_ratio(params, frames, float(r))
        accs[i] = float((pred == labels).mean())
    return EvalReport(ratios=grid, accuracies=accs, auc=observation_auc(grid, accs))


def measure_stream_latency(params: ModelParams, frames: np.ndarray) -> np.ndarray:
    """Wall-clock seconds per pushed frame for one (T, V, 3) sequence."""
    session = StreamSession(params, limit=frames.shape[0])
    out = np.empty(frames.shape[0])
    for t in range(frames.shape[0]):
        tick = time.perf_counter()
        session.push(frames[t])
        out[t] = time.perf_counter() - tick
    return out
