"""Built-in self checks.

These are the invariants the package stakes its correctness on: analytic
gradients agree with finite differences, the fixed-step solvers converge at
their textbook orders, streaming inference reproduces batch inference,
checkpoints round-trip bitwise, outputs are causal, and the default model
has exactly the documented number of parameters. The `verify` CLI command
and the acceptance test suite both run the checks defined here.
"""

from __future__ import annotations

import dataclasses
import os
import tempfile
import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .config import ModelConfig, TrainConfig
from .data import batch_arrays, generate_dataset
from .errors import VerificationError
from .heads import loss_cls, pair_count, smooth_labels
from .model import StreamSession, count_parameters, forward, init_model
from .odeflow import ode_solve
from .tensor import Tensor, grad_check
from .training import batch_loss, train
from .checkpoint import load_checkpoint, save_checkpoint

DOCUMENTED_PARAMETER_COUNT = 73_527


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0
    values: dict = dataclass_field(default_factory=dict)

    def line(self) -> str:
        mark = "ok" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.detail} ({self.elapsed:.2f}s)"


def _toy_config() -> ModelConfig:
    return ModelConfig(num_joints=3, hidden_dim=8, num_layers=1, graph_heads=2,
                       temporal_heads=2, future_steps=2, num_classes=3,
                       max_frames=3)


def check_gradients(seed: int = 0, tol: float = 1e-4, eps: float = 1e-5,
                    sample: int | None = None,
                    floor: float = 1e-6) -> CheckResult:
    """Finite-difference check of the full training loss on a small model.

    The latent-forecast target is normally held out of the gradient; finite
    differences cannot represent that cut, so the check runs with the
    stop-gradient disabled and the loss differentiable end to end. The
    relative-error denominator is floored at `floor`: a central difference
    of an O(1) loss carries ~1e-11 absolute noise, so entries smaller than
    the floor are held to tol*floor absolutely instead of drowning in
    measurement noise.

    The loss is piecewise smooth (relu); when a probe interval happens to
    straddle a kink the central difference is biased no matter how correct
    the gradient is. A failing first pass is therefore retried once with a
    10x smaller step (and a matching 10x higher floor to absorb the extra
    roundoff): a kink almost never sits inside both intervals, while a
    genuinely wrong gradient fails at every step size.
    """
    start = time.perf_counter()
    config = dataclasses.replace(_toy_config(), stop_grad_feat_target=False)
    params = init_model(config, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    frames = rng.normal(size=(2, config.max_frames, config.num_joints, 3))
    labels = rng.integers(0, config.num_classes, size=2)
    targets = (smooth_labels(labels, config.num_classes, 0.1)[:, None, :]
               * np.ones((1, config.max_frames, 1)))
    cfg = TrainConfig(lambda_pred=0.1, lambda_feat=1e-3)
    inputs = [t for _, t in params.trainable()]

    def loss_fn(*_args):
        value, _ = batch_loss(params, frames, targets, cfg)
        return value

    report = None
    used_eps = eps
    for trial_eps, trial_floor in ((eps, floor), (eps / 10, floor * 10)):
        trial = grad_check(loss_fn, inputs, eps=trial_eps, sample=sample,
                           seed=seed, floor=trial_floor)
        if report is None or trial.max_rel_err < report.max_rel_err:
            report, used_eps = trial, trial_eps
        if report.max_rel_err < tol:
            break
    elapsed = time.perf_counter() - start
    detail = (f"max rel err {report.max_rel_err:.2e} over "
              f"{report.entries_checked} entries, tol {tol:.0e} "
              f"(eps {used_eps:.0e}, denominator floor {floor:.0e})")
    return CheckResult("gradient-fidelity", report.max_rel_err < tol, detail,
                       elapsed, {"max_rel_err": report.max_rel_err,
                                 "eps": used_eps})


_ORDER_WINDOWS = {"euler": (1.7, 2.3), "midpoint": (3.3, 4.7),
                  "rk4": (12.0, float("inf"))}


def solver_error_ratio(method: str, sign: float = 1.0,
                       coarse_substeps: int = 8) -> float:
    """Global-error ratio when the substep count doubles, on dz/dt = sign*z
    over [0, 1] against the analytic exponential."""
    z0 = Tensor(np.array([[1.0]]), requires_grad=False)
    times = np.array([0.0, 1.0])
    exact = float(np.exp(sign))

    def field(z, t):
        return z * sign

    errs = []
    for n in (coarse_substeps, 2 * coarse_substeps):
        path = ode_solve(field, z0, times, method=method, substeps=n)
        errs.append(abs(float(path.data[-1, 0, 0]) - exact))
    return errs[0] / errs[1]


def check_solver_orders(coarse_substeps: int = 8) -> CheckResult:
    """Halving the step must shrink error by ~2 (euler), ~4 (midpoint) and
    at least 12 (rk4) on both the growing and decaying exponential."""
    start = time.perf_counter()
    ratios = {}
    bad = []
    for method, (lo, hi) in _ORDER_WINDOWS.items():
        for sign in (1.0, -1.0):
            r = solver_error_ratio(method, sign=sign,
                                   coarse_substeps=coarse_substeps)
            ratios[f"{method}{'+' if sign > 0 else '-'}"] = r
            if not lo <= r <= hi:
                bad.append(method)
    detail = ", ".join(f"{k} x{r:.1f}" for k, r in ratios.items())
    return CheckResult("solver-orders", not bad, detail,
                       time.perf_counter() - start, {"ratios": ratios})


def pair_count_grid(horizons=range(1, 6), lengths=(8, 16, 64)) -> dict:
    """Forecast pair counts K for an (N, T) grid; K = N*T - N*(N+1)/2."""
    return {(n, t): pair_count(t, n) for n in horizons for t in lengths}


def check_loss_bookkeeping() -> CheckResult:
    """Pair counts match the closed form, smoothed labels stay stochastic,
    and the per-frame-per-class loss normalizer hits the uniform oracle."""
    start = time.perf_counter()
    grid = pair_count_grid()
    count_ok = all(k == n * t - n * (n + 1) // 2 for (n, t), k in grid.items())

    labels = np.arange(7) % 4
    smoothed = smooth_labels(labels, 4, 0.1)
    sums_ok = bool(np.allclose(smoothed.sum(axis=-1), 1.0, atol=1e-12))

    t_frames, classes = 5, 4
    logits = Tensor(np.zeros((3, t_frames, classes)))
    targets = smooth_labels(np.array([0, 1, 2]), classes, 0.1)[:, None, :] \
        * np.ones((1, t_frames, 1))
    uniform = float(loss_cls(logits, targets).data)
    oracle = np.log(classes) / classes
    norm_ok = abs(uniform - oracle) < 1e-12

    passed = count_ok and sums_ok and norm_ok
    detail = (f"pair counts match closed form over {len(grid)} (N,T) cells: "
              f"{count_ok}, smoothed labels sum to 1: {sums_ok}, uniform "
              f"loss {uniform:.6f} vs ln(C)/C {oracle:.6f}")
    table = {f"N={n},T={t}": k for (n, t), k in grid.items()}
    return CheckResult("loss-bookkeeping", passed, detail,
                       time.perf_counter() - start, {"pair_counts": table})


def _probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def check_streaming(dtype=np.float64, seed: int = 0, tol: float | None = None,
                    sequences: int = 20, frames_per_seq: int = 12) -> CheckResult:
    """Three routes to the same answer: the parallel full-sequence pass,
    per-prefix recomputation, and incremental streaming must agree on
    every latent and class distribution; temporal attention must be
    exactly zero above the diagonal."""
    start = time.perf_counter()
    if tol is None:
        tol = 1e-9 if dtype == np.float64 else 1e-4
    config = ModelConfig(num_joints=4, hidden_dim=16, num_layers=2,
                         graph_heads=2, temporal_heads=2, future_steps=2,
                         num_classes=3, max_frames=frames_per_seq)
    params = init_model(config, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    causal = True
    for _ in range(sequences):
        seq = rng.normal(size=(frames_per_seq, config.num_joints, 3))
        seq = seq.astype(dtype)
        sink: list = []
        out = forward(params, seq[None], decode_coords=False, attn_sink=sink)
        full_latents = out.latents.data[0]           # (T, V, D)
        full_probs = _probs(out.logits.data[0])      # (T, C)
        for t in range(1, frames_per_seq + 1):
            pre = forward(params, seq[None, :t], decode_coords=False)
            worst = max(worst,
                        float(np.abs(pre.latents.data[0, -1]
                                     - full_latents[t - 1]).max()),
                        float(np.abs(_probs(pre.logits.data[0, -1])
                                     - full_probs[t - 1]).max()))
        session = StreamSession(params, limit=frames_per_seq)
        for t in range(frames_per_seq):
            got = session.push(seq[t])
            worst = max(worst,
                        float(np.abs(got.latent - full_latents[t]).max()),
                        float(np.abs(got.probs - full_probs[t]).max()))
        for name, mat in sink:
            if name.endswith(".temporal"):
                upper = np.triu(mat, k=1)
                causal = causal and not np.any(upper)
    passed = worst < tol and causal
    detail = (f"{sequences} sequences: max deviation {worst:.2e} "
              f"(tol {tol:.0e}) at {np.dtype(dtype).name}, "
              f"attention upper triangles all zero: {causal}")
    return CheckResult(f"stream-equivalence-{np.dtype(dtype).name}",
                       passed, detail, time.perf_counter() - start,
                       {"max_abs_err": worst, "causal": causal})


def check_causality(seed: int = 0) -> CheckResult:
    """Editing future frames must not change earlier logits at all."""
    start = time.perf_counter()
    config = ModelConfig(num_joints=4, hidden_dim=16, num_layers=2,
                         graph_heads=2, temporal_heads=2, future_steps=2,
                         num_classes=3, max_frames=8)
    params = init_model(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    frames = rng.normal(size=(1, config.max_frames, config.num_joints, 3))
    cut = 5
    base = forward(params, frames, decode_coords=False).logits.data
    edited = frames.copy()
    edited[:, cut:] += rng.normal(size=edited[:, cut:].shape) * 10.0
    other = forward(params, edited, decode_coords=False).logits.data
    same = bool(np.array_equal(base[:, :cut], other[:, :cut]))
    detail = f"logits for frames < {cut} bitwise identical after future edit: {same}"
    return CheckResult("causality", same, detail, time.perf_counter() - start)


def check_checkpoint(seed: int = 0) -> CheckResult:
    """Save/load round trip is bitwise and resumed training matches."""
    start = time.perf_counter()
    config = _toy_config()
    cfg = TrainConfig(max_epochs=2, batch_size=4, seed=seed, target_frames=3)
    data = generate_dataset(num_classes=config.num_classes, per_class=4,
                            num_frames=3, num_joints=config.num_joints,
                            seed=seed)
    frames, labels = batch_arrays(data, length=3)

    solid = train(init_model(config, seed=seed), frames, labels, cfg)

    half_cfg = TrainConfig(max_epochs=1, batch_size=4, seed=seed, target_frames=3)
    half = train(init_model(config, seed=seed), frames, labels, half_cfg)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "check.ckpt")
        save_checkpoint(path, half.params, train=half_cfg, epoch=half.epochs_run,
                        velocity=half.velocity, rng=half.rng)
        bundle = load_checkpoint(path)
    stored = dict(bundle.params.named())
    bitwise = all(np.array_equal(t.data, stored[name].data)
                  for name, t in half.params.named())
    before = forward(half.params, frames, decode_coords=False).logits.data
    after = forward(bundle.params, frames, decode_coords=False).logits.data
    logits_ok = bool(np.array_equal(before, after))
    resumed = train(bundle.params, frames, labels, cfg,
                    start_epoch=bundle.epoch, rng=bundle.rng,
                    velocity=bundle.velocity)
    solid_named = dict(solid.params.named())
    exact = all(np.array_equal(t.data, solid_named[name].data)
                for name, t in resumed.params.named())
    passed = bitwise and logits_ok and exact
    detail = (f"round trip bitwise: {bitwise}, reloaded logits bitwise: "
              f"{logits_ok}, resumed run matches uninterrupted run bitwise: "
              f"{exact}")
    return CheckResult("checkpoint-integrity", passed, detail,
                       time.perf_counter() - start)


def check_determinism(seed: int = 0, tol: float = 1e-9) -> CheckResult:
    """Equal seed and config must reproduce the epoch-loss trace."""
    start = time.perf_counter()
    config = _toy_config()
    cfg = TrainConfig(max_epochs=3, batch_size=4, seed=seed, target_frames=3)
    data = generate_dataset(num_classes=config.num_classes, per_class=4,
                            num_frames=3, num_joints=config.num_joints,
                            seed=seed)
    frames, labels = batch_arrays(data, length=3)
    traces = []
    for _ in range(2):
        result = train(init_model(config, seed=seed), frames, labels, cfg)
        traces.append(np.array([e.loss for e in result.history]))
    gap = float(np.abs(traces[0] - traces[1]).max())
    detail = f"two equal-seed runs: max epoch-loss gap {gap:.2e}, tol {tol:.0e}"
    return CheckResult("determinism", gap <= tol, detail,
                       time.perf_counter() - start, {"gap": gap})


def check_parameter_count() -> CheckResult:
    start = time.perf_counter()
    params = init_model(ModelConfig())
    count = count_parameters(params)
    detail = f"default config has {count} trainable parameters, " \
             f"documented {DOCUMENTED_PARAMETER_COUNT}"
    return CheckResult("parameter-count", count == DOCUMENTED_PARAMETER_COUNT,
                       detail, time.perf_counter() - start, {"count": count})


CHECK_MODES = {
    "grad": lambda seed, dtype, grad_sample: [
        check_gradients(seed=seed, sample=grad_sample)],
    "ode": lambda seed, dtype, grad_sample: [check_solver_orders()],
    "causal": lambda seed, dtype, grad_sample: [
        check_causality(seed=seed), check_streaming(dtype=dtype, seed=seed)],
    "count": lambda seed, dtype, grad_sample: [check_loss_bookkeeping()],
    "checkpoint": lambda seed, dtype, grad_sample: [
        check_checkpoint(seed=seed), check_determinism(seed=seed)],
    "params": lambda seed, dtype, grad_sample: [check_parameter_count()],
}

_ALL_MODES = ("params", "count", "ode", "causal", "checkpoint", "grad")


def run_verification(modes=("all",), seed: int = 0,
                     grad_sample: int | None = 200,
                     precision: str = "double") -> list[CheckResult]:
    """Run the named self-check suites (cheapest first for "all").

    grad_sample bounds the finite-difference work; pass None to check every
    parameter entry (slower, used by the acceptance suite).
    """
    dtype = np.float64 if precision == "double" else np.float32
    wanted = list(_ALL_MODES) if "all" in modes else list(modes)
    results = []
    for mode in wanted:
        if mode not in CHECK_MODES:
            raise VerificationError(f"unknown verification mode '{mode}'; "
                                    f"choose from {sorted(CHECK_MODES)} or all")
        results.extend(CHECK_MODES[mode](seed, dtype, grad_sample))
    return results


def require_all(results: list[CheckResult]) -> None:
    failed = [r for r in results if not r.passed]
    if failed:
        names = ", ".join(r.name for r in failed)
        raise VerificationError(f"self checks failed: {names}")
