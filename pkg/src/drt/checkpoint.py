"""Bit-exact checkpoint container for config, parameters and optimizer state.

Layout: 4-byte magic ``DRT1``, a 4-byte little-endian header length, a
UTF-8 JSON header (config, seed, extra metadata, tensor manifest with
name/shape/dtype/offset), then the raw little-endian tensor blobs
concatenated in manifest order. Save -> load roundtrips are bitwise exact,
optimizer moments included.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import DrtParameters, ModelConfig, init_params

__all__ = ["CheckpointFormatError", "Checkpoint", "save_checkpoint", "load_checkpoint"]

MAGIC = b"DRT1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointFormatError(ValueError):
    """The file is not a valid checkpoint."""


@dataclass
class Checkpoint:
    config: ModelConfig
    params: DrtParameters
    opt_state: "OptimizerState | None"
    seed: int | None
    extra: dict


def _manifest_entries(params: DrtParameters, opt_state) -> list[tuple[str, np.ndarray]]:
    entries = [(name, t.data) for name, t in params.named_tensors()]
    if opt_state is not None:
        for name, _ in params.named_tensors():
            entries.append((f"opt.m.{name}", opt_state.m[name]))
        for name, _ in params.named_tensors():
            entries.append((f"opt.v.{name}", opt_state.v[name]))
    return entries


def save_checkpoint(path, config: ModelConfig, params: DrtParameters,
                    opt_state=None, seed: int | None = None, extra: dict | None = None) -> None:
    """Write the container; ``extra`` must be JSON-serializable."""
    entries = _manifest_entries(params, opt_state)
    manifest = []
    blobs = []
    offset = 0
    for name, arr in entries:
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPES:
            raise CheckpointFormatError(f"unsupported tensor dtype {dtype_name} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_name]).tobytes()
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype_name, "offset": offset}
        )
        blobs.append(raw)
        offset += len(raw)

    header = {
        "config": config.to_dict(),
        "seed": seed,
        "extra": extra or {},
        "adam_step": None if opt_state is None else opt_state.step,
        "manifest": manifest,
        "blob_bytes": offset,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def _rebuild_params(config: ModelConfig, tensors: dict[str, np.ndarray]) -> DrtParameters:
    params = init_params(config, seed=0, dtype=np.float32)
    expected = [name for name, _ in params.named_tensors()]
    missing = [n for n in expected if n not in tensors]
    if missing:
        raise CheckpointFormatError(f"manifest is missing parameter tensors: {missing[:5]}")
    for name, t in params.named_tensors():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(t.shape):
            raise CheckpointFormatError(
                f"tensor {name} has shape {arr.shape}, expected {tuple(t.shape)}"
            )
        t.data = arr
    return params


def load_checkpoint(path) -> Checkpoint:
    """Read a container written by :func:`save_checkpoint`."""
    from .train import OptimizerState  # circular at import time otherwise

    try:
        raw = Path(path).read_bytes()
    except OSError:
        raise
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint file")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: unreadable header: {e}") from e

    blob = raw[8 + header_len:]
    if len(blob) != header.get("blob_bytes"):
        raise CheckpointFormatError(
            f"{path}: blob section is {len(blob)} bytes, manifest expects {header.get('blob_bytes')}"
        )

    tensors: dict[str, np.ndarray] = {}
    spans = []
    for entry in header["manifest"]:
        dtype = entry.get("dtype")
        if dtype not in _DTYPES:
            raise CheckpointFormatError(f"{path}: unsupported dtype {dtype} in manifest")
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        nbytes = count * np.dtype(_DTYPES[dtype]).itemsize
        start = entry["offset"]
        if start + nbytes > len(blob):
            raise CheckpointFormatError(f"{path}: tensor {entry['name']} overruns blob section")
        spans.append((start, start + nbytes, entry["name"]))
        arr = np.frombuffer(blob[start:start + nbytes], dtype=_DTYPES[dtype])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(dtype, copy=True)

    # the manifest must tile the blob exactly: no gaps, no overlaps
    spans.sort()
    cursor = 0
    for start, end, name in spans:
        if start != cursor:
            raise CheckpointFormatError(
                f"{path}: tensor {name} overruns or leaves a gap in the blob layout"
            )
        cursor = end
    if cursor != len(blob):
        raise CheckpointFormatError(f"{path}: blob has {len(blob) - cursor} unaccounted bytes")

    config = ModelConfig.from_dict(header["config"])
    params = _rebuild_params(config, tensors)

    opt_state = None
    if header.get("adam_step") is not None:
        m = {n: tensors[f"opt.m.{n}"] for n, _ in params.named_tensors() if f"opt.m.{n}" in tensors}
        v = {n: tensors[f"opt.v.{n}"] for n, _ in params.named_tensors() if f"opt.v.{n}" in tensors}
        names = [n for n, _ in params.named_tensors()]
        if set(m) != set(names) or set(v) != set(names):
            raise CheckpointFormatError(f"{path}: optimizer moment tensors incomplete")
        opt_state = OptimizerState(m=m, v=v, step=int(header["adam_step"]))

    return Checkpoint(
        config=config,
        params=params,
        opt_state=opt_state,
        seed=header.get("seed"),
        extra=header.get("extra", {}),
    )
