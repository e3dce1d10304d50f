"""Command-line surface.

Subcommands: train, stream, eval, dump-attention, verify, ablate. Machine
output (JSON lines, CSV) goes to stdout or to explicit output paths; human
progress and summaries go to stderr. Every ModelConfig/TrainConfig key can
be overridden by a flag of the same name (kebab-cased), layered on top of
an optional --config JSON file.

Exit codes: 0 success, 1 usage, 2 data/schema, 3 verification failure,
4 divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import statistics
import sys
import time

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig, load_config_file
from .data import (CausalNormalizer, batch_arrays, load_jsonl, normalize_frames,
                   parse_jsonl, split_dataset)
from .errors import (CapacityError, CheckpointError, ConfigError,
                     DivergenceError, ParseError, PreprocessingError,
                     SchemaError, VerificationError)
from .evaluation import evaluate_ratios, predict_at_ratio
from .model import StreamSession, forward, init_model, replace_config
from .training import train
from .verify import CHECK_MODES, run_verification

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3
EXIT_DIVERGED = 4

# model-config keys that do not change parameter shapes and may therefore
# be overridden when running from a checkpoint
_INFERENCE_SAFE = {"solver", "substeps", "predictor"}


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; 2 is reserved for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _parse_int_list(text: str) -> list[int]:
    text = text.strip()
    if text.startswith("["):
        return [int(v) for v in json.loads(text)]
    if not text:
        return []
    return [int(v) for v in text.split(",")]


def _parse_edges(text: str) -> list[list[int]]:
    try:
        pairs = json.loads(text)
        return [[int(a), int(b)] for a, b in pairs]
    except (ValueError, TypeError) as exc:
        raise argparse.ArgumentTypeError(
            f"edges must be JSON pairs like [[0,1],[0,2]]: {exc}")


def _field_default(field: dataclasses.Field):
    if field.default is not dataclasses.MISSING:
        return field.default
    return field.default_factory()


def _flag_type(name: str, default):
    if name == "edges":
        return _parse_edges
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, list):
        return _parse_int_list
    return str

_FLAG_ALIASES = {
    "future_steps": ["--n-steps"],
    "lambda_pred": ["--lambda1"],
    "lambda_feat": ["--lambda2"],
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH",
                        help="JSON file with model/train sections")
    parser.add_argument("--precision", choices=("single", "double"),
                        default="double", help="parameter precision")
    parser.add_argument("--ratio-step", type=float, default=0.1,
                        metavar="R", help="observation-ratio grid step")
    seen = set()
    for cls in (ModelConfig, TrainConfig):
        for f in dataclasses.fields(cls):
            if f.name in seen:
                continue
            seen.add(f.name)
            flags = [f"--{f.name.replace('_', '-')}"]
            flags += _FLAG_ALIASES.get(f.name, [])
            default = _field_default(f)
            parser.add_argument(*flags, dest=f.name, default=None,
                                type=_flag_type(f.name, default),
                                help=f"override {f.name} (default {default})")


def _configs_from_args(args) -> tuple[ModelConfig, TrainConfig]:
    if args.config:
        model_cfg, train_cfg = load_config_file(args.config)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()
    model_over, train_over = {}, {}
    for f in dataclasses.fields(ModelConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            model_over[f.name] = value
    for f in dataclasses.fields(TrainConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            train_over[f.name] = value
    model_cfg = dataclasses.replace(model_cfg, **model_over).validate()
    train_cfg = dataclasses.replace(train_cfg, **train_over)
    return model_cfg, train_cfg


def _dtype(args):
    return np.float64 if args.precision == "double" else np.float32


def _load_params_for_inference(args):
    """Checkpoint parameters with the shape-safe overrides applied."""
    bundle = load_checkpoint(args.checkpoint)
    params = bundle.params
    overrides = {}
    for f in dataclasses.fields(ModelConfig):
        value = getattr(args, f.name, None)
        if value is None:
            continue
        if f.name in _INFERENCE_SAFE:
            overrides[f.name] = value
        else:
            print(f"note: --{f.name.replace('_', '-')} is fixed by the "
                  f"checkpoint; ignoring", file=sys.stderr)
    if overrides:
        params = replace_config(params, **overrides)
    return params, bundle


def _read_sequences(path: str):
    if path == "-":
        return parse_jsonl(sys.stdin, source="<stdin>")
    return load_jsonl(path)


def _require_joint_match(frames_v: int, config: ModelConfig, what: str) -> None:
    if frames_v != config.num_joints:
        raise SchemaError(f"{what} has {frames_v} joints but the model "
                          f"expects {config.num_joints}")


def _require_labels_fit(labels: np.ndarray, config: ModelConfig) -> None:
    top = int(labels.max())
    if top >= config.num_classes:
        raise SchemaError(f"label {top} outside the configured "
                          f"{config.num_classes} classes")


def _open_out(path):
    return open(path, "w") if path else sys.stdout


# -- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    model_cfg, train_cfg = _configs_from_args(args)
    seqs = load_jsonl(args.data)
    frames, labels = batch_arrays(seqs, length=train_cfg.target_frames)
    _require_joint_match(frames.shape[2], model_cfg, "training data")
    _require_labels_fit(labels, model_cfg)

    params = init_model(model_cfg, seed=train_cfg.seed, dtype=_dtype(args))
    log_path = args.log or args.out + ".log"
    start = time.perf_counter()
    with open(log_path, "w") as log:
        def on_epoch(stats):
            log.write(json.dumps({
                "epoch": stats.epoch, "loss": stats.loss, "cls": stats.cls,
                "pred": stats.pred, "feat": stats.feat, "lr": stats.lr,
                "seconds": round(stats.seconds, 4)}) + "\n")
            print(f"epoch {stats.epoch:3d}  loss {stats.loss:.4f}  "
                  f"lr {stats.lr:.4g}", file=sys.stderr)

        result = train(params, frames, labels, train_cfg, on_epoch=on_epoch)
    save_checkpoint(args.out, result.params, train=train_cfg,
                    epoch=result.epochs_run, velocity=result.velocity,
                    rng=result.rng)
    accuracy = float((predict_at_ratio(result.params, frames, 1.0)
                      == labels).mean())
    summary = {
        "checkpoint": args.out,
        "log": log_path,
        "epochs": result.epochs_run,
        "final_loss": result.history[-1].loss if result.history else None,
        "train_accuracy": accuracy,
        "sequences": len(seqs),
        "seconds": round(time.perf_counter() - start, 3),
    }
    print(json.dumps(summary))
    print(f"trained {result.epochs_run} epochs; train accuracy "
          f"{accuracy:.3f}; checkpoint at {args.out}", file=sys.stderr)
    return EXIT_OK


# -- stream ------------------------------------------------------------------


def cmd_stream(args) -> int:
    params, _ = _load_params_for_inference(args)
    seqs = _read_sequences(args.data)
    for seq in seqs:
        _require_joint_match(seq.frames.shape[1], params.config,
                             f"sequence {seq.id!r}")
        normalize = (CausalNormalizer() if args.preprocess == "causal"
                     else lambda f: np.asarray(f, dtype=np.float64))
        session = StreamSession(params, limit=seq.frames.shape[0])
        for t, frame in enumerate(seq.frames):
            tick = time.perf_counter()
            result = session.push(normalize(frame))
            latency_ms = (time.perf_counter() - tick) * 1000.0
            print(json.dumps({
                "id": seq.id,
                "frame": t,
                "label": result.label,
                "probs": [float(p) for p in result.probs],
                "latency_ms": round(latency_ms, 4),
            }))
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    params, _ = _load_params_for_inference(args)
    seqs = _read_sequences(args.data)
    frames, labels = batch_arrays(seqs, length=params.config.max_frames)
    _require_joint_match(frames.shape[2], params.config, "evaluation data")
    _require_labels_fit(labels, params.config)

    report = evaluate_ratios(params, frames, labels, step=args.ratio_step)
    out = _open_out(args.csv)
    try:
        out.write("ratio,accuracy\n")
        for r, a in zip(report.ratios, report.accuracies):
            out.write(f"{r:.6g},{a:.6g}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    summary = {
        "auc": report.auc,
        "ratio_step": args.ratio_step,
        "ratios": [float(r) for r in report.ratios],
        "accuracies": [float(a) for a in report.accuracies],
        "sequences": len(seqs),
    }
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    elif args.csv:
        print(json.dumps(summary))
    print(f"AUC {report.auc:.4f} over {len(seqs)} sequences "
          f"({len(report.ratios)} ratios)", file=sys.stderr)
    return EXIT_OK


# -- dump-attention ----------------------------------------------------------


def cmd_dump_attention(args) -> int:
    params, _ = _load_params_for_inference(args)
    config = params.config
    seqs = _read_sequences(args.data)
    if not 0 <= args.index < len(seqs):
        print(f"error: --index {args.index} outside the {len(seqs)} "
              f"sequences in {args.data}", file=sys.stderr)
        return EXIT_USAGE
    if not 0 <= args.head < config.temporal_heads:
        print(f"error: --head {args.head} out of range; the model has "
              f"{config.temporal_heads} temporal heads", file=sys.stderr)
        return EXIT_USAGE
    seq = seqs[args.index]
    _require_joint_match(seq.frames.shape[1], config, f"sequence {seq.id!r}")
    frames = (normalize_frames(seq.frames) if args.preprocess == "causal"
              else np.asarray(seq.frames, dtype=np.float64))
    sink: list = []
    forward(params, frames[None], decode_coords=False, attn_sink=sink)
    wanted = f"block{config.num_layers - 1}.temporal"
    matrices = [mat for name, mat in sink if name == wanted]
    # (1, V, heads, T, T): pick the head, average over joints
    grid = matrices[0][0][:, args.head].mean(axis=0)
    out = _open_out(args.out)
    try:
        for row in grid:
            out.write(",".join(f"{v:.17g}" for v in row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"{grid.shape[0]}x{grid.shape[1]} temporal attention of head "
          f"{args.head}, last encoder layer, sequence {seq.id!r}",
          file=sys.stderr)
    return EXIT_OK


# -- verify ------------------------------------------------------------------


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def cmd_verify(args) -> int:
    known = set(CHECK_MODES) | {"all"}
    bad = [m for m in (args.modes or []) if m not in known]
    if bad:
        print(f"error: unknown verify mode(s) {bad}; choose from "
              f"{sorted(known)}", file=sys.stderr)
        return EXIT_USAGE
    sample = None if args.grad_sample == 0 else args.grad_sample
    results = run_verification(args.modes or ("all",),
                               seed=args.seed if args.seed is not None else 0,
                               grad_sample=sample, precision=args.precision)
    for r in results:
        print(json.dumps({"check": r.name, "passed": bool(r.passed),
                          "detail": r.detail,
                          "seconds": round(r.elapsed, 3),
                          "values": _json_safe(r.values)}))
        print(r.line(), file=sys.stderr)
    if all(r.passed for r in results):
        return EXIT_OK
    return EXIT_VERIFY


# -- ablate ------------------------------------------------------------------

_ARM_BASES = {
    "cls-only": {"lambda_pred": 0.0, "lambda_feat": 0.0, "future_steps": 0},
    "cls+pred": {"lambda_feat": 0.0},
    "cls+pred+feat": {},
    "full": {},
}


def parse_arm(text: str) -> tuple[str, dict, dict]:
    """An arm spec: base[:n=K][:predictor=P] -> (name, model overrides,
    train overrides)."""
    parts = text.split(":")
    base = parts[0]
    if base not in _ARM_BASES:
        raise ConfigError(f"unknown ablation arm {base!r}; choose from "
                          f"{sorted(_ARM_BASES)}")
    model_over: dict = {}
    train_over: dict = {}
    for key, value in _ARM_BASES[base].items():
        if key == "future_steps":
            model_over[key] = value
        else:
            train_over[key] = value
    for mod in parts[1:]:
        if "=" not in mod:
            raise ConfigError(f"arm modifier {mod!r} must look like n=2 or "
                              f"predictor=none")
        key, _, value = mod.partition("=")
        if key == "n":
            steps = int(value)
            if not 0 <= steps <= 5:
                raise ConfigError(f"arm horizon n={steps} outside 0..5")
            model_over["future_steps"] = steps
        elif key == "predictor":
            if value not in ("ode", "none"):
                raise ConfigError(f"arm predictor must be ode or none, "
                                  f"got {value!r}")
            model_over["predictor"] = value
        else:
            raise ConfigError(f"unknown arm modifier {key!r}")
    return text, model_over, train_over


def cmd_ablate(args) -> int:
    model_cfg, train_cfg = _configs_from_args(args)
    seqs = load_jsonl(args.data)
    if args.test_data:
        train_seqs, test_seqs = seqs, load_jsonl(args.test_data)
    else:
        train_seqs, test_seqs = split_dataset(seqs, test_fraction=0.25,
                                              seed=train_cfg.seed)
    train_frames, train_labels = batch_arrays(train_seqs,
                                              length=train_cfg.target_frames)
    test_frames, test_labels = batch_arrays(test_seqs,
                                            length=train_cfg.target_frames)
    _require_joint_match(train_frames.shape[2], model_cfg, "training data")
    _require_labels_fit(train_labels, model_cfg)
    _require_labels_fit(test_labels, model_cfg)

    if args.seeds:
        seeds = _parse_int_list(args.seeds)
    else:
        base = train_cfg.seed
        seeds = [base, base + 1, base + 2]
    arms = [parse_arm(a.strip()) for a in args.arms.split(",") if a.strip()]
    if not arms:
        raise ConfigError("no ablation arms requested")

    for name, model_over, train_over in arms:
        aucs, low_accs, full_accs, train_accs = [], [], [], []
        for seed in seeds:
            arm_model = dataclasses.replace(model_cfg, **model_over).validate()
            arm_train = dataclasses.replace(train_cfg, seed=seed, **train_over)
            params = init_model(arm_model, seed=seed, dtype=_dtype(args))
            result = train(params, train_frames, train_labels, arm_train)
            report = evaluate_ratios(result.params, test_frames, test_labels,
                                     step=args.ratio_step)
            low = float((predict_at_ratio(result.params, test_frames, 0.25)
                         == test_labels).mean())
            full = float((predict_at_ratio(result.params, test_frames, 1.0)
                          == test_labels).mean())
            on_train = float((predict_at_ratio(result.params, train_frames, 1.0)
                              == train_labels).mean())
            aucs.append(report.auc)
            low_accs.append(low)
            full_accs.append(full)
            train_accs.append(on_train)
            print(f"arm {name} seed {seed}: auc {report.auc:.4f} "
                  f"acc@0.25 {low:.3f} acc@1.0 {full:.3f} "
                  f"train acc {on_train:.3f}", file=sys.stderr)
        print(json.dumps({
            "arm": name,
            "seeds": seeds,
            "auc": aucs,
            "median_auc": statistics.median(aucs),
            "accuracy_at_025": low_accs,
            "median_accuracy_at_025": statistics.median(low_accs),
            "accuracy_at_100": full_accs,
            "train_accuracy": train_accs,
            "epochs": train_cfg.max_epochs,
        }))
    return EXIT_OK


# -- wiring ------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="skelstream",
                     description="online skeleton action recognition")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_train = sub.add_parser("train", help="fit a model and write a checkpoint")
    _add_config_flags(p_train)
    p_train.add_argument("--data", required=True, metavar="PATH",
                         help="training sequences (JSON lines)")
    p_train.add_argument("--out", default="model.ckpt", metavar="PATH",
                         help="checkpoint output path")
    p_train.add_argument("--log", default=None, metavar="PATH",
                         help="epoch log path (default <out>.log)")
    p_train.set_defaults(func=cmd_train)

    p_stream = sub.add_parser("stream",
                              help="per-frame online classification")
    _add_config_flags(p_stream)
    p_stream.add_argument("--checkpoint", required=True, metavar="PATH")
    p_stream.add_argument("--data", required=True, metavar="PATH",
                          help="sequence file, or - for stdin")
    p_stream.add_argument("--preprocess", choices=("causal", "none"),
                          default="causal",
                          help="first-frame normalization (default causal)")
    p_stream.set_defaults(func=cmd_stream)

    p_eval = sub.add_parser("eval",
                            help="accuracy across observation ratios + AUC")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True, metavar="PATH")
    p_eval.add_argument("--data", required=True, metavar="PATH")
    p_eval.add_argument("--csv", default=None, metavar="PATH",
                        help="write the ratio,accuracy curve here "
                             "(default stdout)")
    p_eval.add_argument("--json-out", default=None, metavar="PATH",
                        help="write the JSON summary here")
    p_eval.set_defaults(func=cmd_eval)

    p_dump = sub.add_parser("dump-attention",
                            help="export last-layer temporal attention as CSV")
    _add_config_flags(p_dump)
    p_dump.add_argument("--checkpoint", required=True, metavar="PATH")
    p_dump.add_argument("--data", required=True, metavar="PATH")
    p_dump.add_argument("--index", type=int, default=0,
                        help="which sequence in the file (default 0)")
    p_dump.add_argument("--head", type=int, default=0,
                        help="temporal head to export (default 0)")
    p_dump.add_argument("--preprocess", choices=("causal", "none"),
                        default="causal")
    p_dump.add_argument("--out", default=None, metavar="PATH",
                        help="CSV output path (default stdout)")
    p_dump.set_defaults(func=cmd_dump_attention)

    p_verify = sub.add_parser("verify", help="run the built-in self checks")
    _add_config_flags(p_verify)
    p_verify.add_argument("modes", nargs="*", metavar="mode",
                          help=f"which suites to run: "
                               f"{', '.join(sorted(CHECK_MODES))} or all "
                               f"(default all)")
    p_verify.add_argument("--grad-sample", type=int, default=200,
                          help="entries per tensor for the gradient check; "
                               "0 checks everything")
    p_verify.set_defaults(func=cmd_verify)

    p_ablate = sub.add_parser("ablate",
                              help="train loss/horizon arms and compare AUC")
    _add_config_flags(p_ablate)
    p_ablate.add_argument("--data", required=True, metavar="PATH")
    p_ablate.add_argument("--test-data", default=None, metavar="PATH",
                          help="held-out sequences (default: stratified "
                               "quarter of --data)")
    p_ablate.add_argument("--arms", default="cls+pred+feat,cls-only",
                          help="comma list, e.g. cls-only,cls+pred+feat:n=2")
    p_ablate.add_argument("--seeds", default=None,
                          help="comma list of seeds (default seed..seed+2)")
    p_ablate.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            print("skelstream: error: a command is required", file=sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except SystemExit as exc:
        code = exc.code
        if code is None:
            return EXIT_OK
        return code if isinstance(code, int) else EXIT_USAGE
    except BrokenPipeError:
        return EXIT_OK
    except FileNotFoundError as exc:
        print(f"error: {exc.filename or exc} not found", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, SchemaError, PreprocessingError, CheckpointError,
            CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VerificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
