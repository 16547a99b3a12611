"""Binary checkpoint format with a JSON config sidecar.

Layout (little-endian): magic "MOES", format version u32, tensor count
u32; per tensor: name length u32 + UTF-8 name, rank u8, dims u64 each,
then float64 values. The sidecar <path>.json carries the full model
config and training provenance. Round-trips are bitwise exact; loading
validates every tensor shape against the sidecar config.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import ModelConfig
from .model import empty_params

MAGIC = b"MOES"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def sidecar_path(path):
    return str(path) + ".json"


def save_checkpoint(path, params, provenance=None):
    named = params.named_tensors()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(named)))
        for name, t in named:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            arr = np.ascontiguousarray(t.data, dtype="<f8")
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes())
    sidecar = {"format_version": FORMAT_VERSION,
               "config": params.config.to_dict(),
               "provenance": provenance or {}}
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return path


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    """Returns (params, provenance). Shapes are validated against the sidecar."""
    try:
        with open(sidecar_path(path), "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"missing sidecar {sidecar_path(path)}") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"invalid sidecar JSON: {e}") from None
    config = ModelConfig.from_dict(sidecar["config"])

    tensors = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointError("bad magic bytes (not a checkpoint)")
        version, = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        count, = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        for _ in range(count):
            nlen, = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            rank, = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = tuple(struct.unpack("<Q", _read_exact(fh, 8, "dim"))[0]
                          for _ in range(rank))
            n_vals = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, n_vals * 8, f"values of {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    params = empty_params(config)
    expected = params.named_tensors()
    expected_names = [n for n, _ in expected]
    missing = [n for n in expected_names if n not in tensors]
    extra = [n for n in tensors if n not in set(expected_names)]
    if missing or extra:
        detail = f"missing {missing[:3]}" if missing else f"unexpected {extra[:3]}"
        raise CheckpointError(f"checkpoint does not match sidecar config ({detail})")
    for name, t in expected:
        if tensors[name].shape != t.data.shape:
            raise CheckpointError(
                f"dimension mismatch for {name}: checkpoint {tensors[name].shape} "
                f"vs config {t.data.shape}")
        t.data = tensors[name]
    return params, sidecar.get("provenance", {})
