"""Checkpoint files: a one-line JSON header followed by raw array bytes.

The header carries the format version, both configs, the training epoch,
the shuffling RNG state, and a manifest listing each array's name, shape
and dtype in payload order. Arrays are stored little-endian and
concatenated. Weights survive a save/load round trip bitwise, so an
interrupted run continues exactly where it stopped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import (TrainConfig, model_config_from_dict, to_dict,
                     train_config_from_dict)
from .errors import CompatibilityError, IntegrityError
from .model import ModelParams, init_model

FORMAT_NAME = "skelstream-checkpoint"
FORMAT_VERSION = 1

_WIRE_DTYPES = {"float64": "<f8", "float32": "<f4"}


@dataclass
class CheckpointBundle:
    params: ModelParams
    train: TrainConfig | None
    epoch: int
    velocity: dict
    rng: np.random.Generator | None


def _named_arrays(params: ModelParams, velocity: dict | None):
    for name, t in params.named():
        yield name, t.data
    if velocity:
        for name in sorted(velocity):
            yield f"opt/velocity/{name}", np.asarray(velocity[name])


def save_checkpoint(path, params: ModelParams, train: TrainConfig | None = None,
                    epoch: int = 0, velocity: dict | None = None,
                    rng: np.random.Generator | None = None) -> None:
    entries = list(_named_arrays(params, velocity))
    manifest = []
    blobs = []
    for name, arr in entries:
        dtype_name = arr.dtype.name
        if dtype_name not in _WIRE_DTYPES:
            raise IntegrityError(f"array {name} has unsupported dtype {dtype_name}")
        blob = np.ascontiguousarray(arr, dtype=_WIRE_DTYPES[dtype_name]).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape),
                         "dtype": dtype_name})
        blobs.append(blob)
    payload = b"".join(blobs)
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "model": to_dict(params.config),
        "train": to_dict(train) if train is not None else None,
        "epoch": int(epoch),
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "arrays": manifest,
        "payload_bytes": len(payload),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload)


def load_checkpoint(path) -> CheckpointBundle:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        if not header_line.endswith(b"\n"):
            raise IntegrityError("checkpoint header line is truncated")
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise IntegrityError(f"checkpoint header is not valid JSON: {exc}") from exc
        if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
            raise CompatibilityError("not a recognized checkpoint file")
        if header.get("version") != FORMAT_VERSION:
            raise CompatibilityError(
                f"checkpoint version {header.get('version')} is not supported "
                f"(expected {FORMAT_VERSION})"
            )
        payload = fh.read()

    expected = header.get("payload_bytes")
    if not isinstance(expected, int) or len(payload) < expected:
        raise IntegrityError(
            f"checkpoint payload truncated: {len(payload)} bytes, "
            f"header promises {expected}"
        )
    if len(payload) > expected:
        raise IntegrityError(
            f"checkpoint has {len(payload) - expected} trailing bytes"
        )

    model_cfg = model_config_from_dict(header["model"])
    train_cfg = (train_config_from_dict(header["train"])
                 if header.get("train") is not None else None)

    manifest = header.get("arrays")
    if not isinstance(manifest, list):
        raise IntegrityError("checkpoint manifest is missing")
    arrays = {}
    offset = 0
    for entry in manifest:
        name, shape, dtype_name = entry["name"], tuple(entry["shape"]), entry["dtype"]
        if dtype_name not in _WIRE_DTYPES:
            raise CompatibilityError(f"array {name} has unsupported dtype {dtype_name}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(_WIRE_DTYPES[dtype_name]).itemsize
        if offset + nbytes > expected:
            raise IntegrityError(f"array {name} runs past the payload")
        arr = np.frombuffer(payload, dtype=_WIRE_DTYPES[dtype_name],
                            count=count, offset=offset).reshape(shape)
        arrays[name] = arr.astype(dtype_name, copy=True)
        offset += nbytes
    if offset != expected:
        raise IntegrityError(
            f"manifest covers {offset} bytes but payload holds {expected}"
        )

    dtype = np.float32 if any(e["dtype"] == "float32" for e in manifest
                              if not e["name"].startswith("opt/")) else np.float64
    params = init_model(model_cfg, seed=0, dtype=dtype)
    expected_names = [name for name, _ in params.named()]
    velocity = {}
    leftover = dict(arrays)
    for name in expected_names:
        if name not in leftover:
            raise IntegrityError(f"checkpoint is missing array {name}")
        leftover.pop(name)
    for name in list(leftover):
        if not name.startswith("opt/velocity/"):
            raise IntegrityError(f"checkpoint holds unexpected array {name}")
        velocity[name[len("opt/velocity/"):]] = leftover.pop(name)

    for name, t in params.named():
        arr = arrays[name]
        if arr.shape != t.data.shape:
            raise IntegrityError(
                f"array {name} has shape {arr.shape}, model expects {t.data.shape}"
            )
        t.data = arr

    rng = None
    state = header.get("rng_state")
    if state is not None:
        rng = np.random.default_rng(0)
        try:
            rng.bit_generator.state = state
        except (ValueError, TypeError, KeyError) as exc:
            raise IntegrityError(f"stored RNG state is invalid: {exc}") from exc

    return CheckpointBundle(params=params, train=train_cfg,
                            epoch=int(header.get("epoch", 0)),
                            velocity=velocity, rng=rng)
