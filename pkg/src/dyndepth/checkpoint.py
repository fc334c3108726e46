"""Binary model checkpoints: a JSON config header plus raw float64 arrays.

Layout (all integers little-endian):

    4 bytes   magic ``DYND``
    u32       format version
    u32       header length, then that many bytes of UTF-8 JSON holding the
              model configuration fields
    u32       number of parameter entries
    entry     u16 name length, name bytes, u8 ndim, ndim x u32 dims,
              then ndim-product x 8 bytes of IEEE-754 float64 data

Values are written verbatim from the parameter arrays, so a save/load
round trip reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .config import ModelConfig

MAGIC = b"DYND"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed, truncated, or incompatible checkpoint files."""


def state_dict(model) -> dict:
    """Name -> array copy of every parameter, in declaration order."""
    return {name: np.array(t.data, dtype=np.float64) for name, t in model.named_parameters()}


def load_state_dict(model, state: dict) -> None:
    """Copy ``state`` values into the model's parameters in place.

    The name sets and every shape must match exactly.
    """
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(state))
    unexpected = sorted(set(state) - set(params))
    if missing or unexpected:
        raise CheckpointError(f"parameter name mismatch: missing={missing}, unexpected={unexpected}")
    for name, tensor in params.items():
        value = np.asarray(state[name], dtype=np.float64)
        if value.shape != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {value.shape}, model {tensor.data.shape}"
            )
        tensor.data = value.copy()
        tensor.grad = None


def save_checkpoint(path, model) -> None:
    config_json = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    entries = state_dict(model)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(config_json)))
        fh.write(config_json)
        fh.write(struct.pack("<I", len(entries)))
        for name, value in entries.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", value.ndim))
            for dim in value.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def _read_exact(fh, count: int) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise CheckpointError(f"truncated checkpoint: wanted {count} bytes, got {len(buf)}")
    return buf


def read_checkpoint(path):
    """Parse a checkpoint file into (ModelConfig, name -> array dict)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError(f"not a checkpoint file: bad magic in {path}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            header = json.loads(_read_exact(fh, header_len).decode("utf-8"))
            config = ModelConfig(**header)
        except (ValueError, TypeError) as exc:
            raise CheckpointError(f"bad config header: {exc}") from exc
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
            numel = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(fh, numel * 8)
            state[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after final checkpoint entry")
    return config, state


def load_checkpoint(path):
    """Rebuild a full model from a checkpoint file."""
    from .halting import DactModel

    config, state = read_checkpoint(path)
    model = DactModel(config, seed=0)
    load_state_dict(model, state)
    return model
