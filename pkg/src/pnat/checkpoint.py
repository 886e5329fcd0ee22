"""Single-file checkpoint container.

Layout: 8-byte magic, u32 version, u64 header length, JSON header, then
raw little-endian tensor payloads in header order (parameters first, then
Adam first/second moments when present). The header carries the config
fingerprint so a checkpoint cannot be silently loaded into a model with a
different shape story.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError
from .optim import AdamState
from .tensor import Tensor

MAGIC = b"PNATCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    fingerprint: str
    params: dict[str, np.ndarray]
    adam: AdamState | None
    rng_state: dict[str, Any] | None
    meta: dict[str, Any]


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float64:
        return "<f8"
    if arr.dtype == np.float32:
        return "<f4"
    raise DataError(f"unsupported checkpoint dtype {arr.dtype}")


def save_checkpoint(path: str | Path, *, params: dict[str, Tensor | np.ndarray],
                    fingerprint: str, adam: AdamState | None = None,
                    rng_state: dict[str, Any] | None = None,
                    meta: dict[str, Any] | None = None) -> None:
    arrays: list[tuple[str, np.ndarray]] = []
    entries = []
    for name, val in params.items():
        arr = val.data if isinstance(val, Tensor) else np.asarray(val)
        arrays.append((name, arr))
        entries.append({"name": name, "shape": list(arr.shape), "dtype": _dtype_tag(arr)})
    adam_header = None
    if adam is not None:
        adam_header = {
            "beta1": adam.beta1, "beta2": adam.beta2, "epsilon": adam.epsilon,
            "step_count": adam.step_count, "moments": sorted(adam.m.keys()),
        }
        for name in adam_header["moments"]:
            arrays.append((f"adam.m.{name}", adam.m[name]))
            arrays.append((f"adam.v.{name}", adam.v[name]))
            entries.append({"name": f"adam.m.{name}", "shape": list(adam.m[name].shape),
                            "dtype": _dtype_tag(adam.m[name])})
            entries.append({"name": f"adam.v.{name}", "shape": list(adam.v[name].shape),
                            "dtype": _dtype_tag(adam.v[name])})
    header = {
        "fingerprint": fingerprint,
        "tensors": entries,
        "adam": adam_header,
        "rng_state": rng_state,
        "meta": meta or {},
        "n_params": len(params),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).astype(_dtype_tag(arr)).tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise DataError(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(count * np.dtype(entry["dtype"]).itemsize)
            arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
            tensors[entry["name"]] = arr
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    adam = None
    if header["adam"] is not None:
        ah = header["adam"]
        adam = AdamState(beta1=ah["beta1"], beta2=ah["beta2"], epsilon=ah["epsilon"],
                         step_count=ah["step_count"])
        for name in ah["moments"]:
            adam.m[name] = tensors[f"adam.m.{name}"]
            adam.v[name] = tensors[f"adam.v.{name}"]
    return Checkpoint(header["fingerprint"], params, adam, header["rng_state"],
                      header["meta"])


def restore_parameters(model, ckpt: Checkpoint, expect_fingerprint: bool = True) -> None:
    """Copy checkpoint arrays into a live model, strictly by name and shape."""
    if expect_fingerprint and ckpt.fingerprint != model.fingerprint():
        raise DataError("checkpoint fingerprint does not match model configuration")
    live = model.parameter_dict()
    missing = sorted(set(live) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(live))
    if missing or extra:
        raise DataError(f"checkpoint/model parameter mismatch: missing={missing[:3]} "
                        f"extra={extra[:3]}")
    for name, tensor in live.items():
        arr = ckpt.params[name]
        if tuple(arr.shape) != tensor.shape:
            raise DataError(f"shape mismatch for '{name}': {arr.shape} vs {tensor.shape}")
        tensor.data = arr.astype(tensor.data.dtype, copy=True)
