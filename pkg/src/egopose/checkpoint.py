"""``.ckpt`` files.

Layout: magic ``EAR1`` | header length (uint64, little endian) | UTF-8 JSON header
``{"config": {...}, "params": [[name, shape], ...]}`` | parameter data as
little-endian float64 in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, ConfigError
from .transformer import Model, ModelConfig, param_shapes

MAGIC = b"EAR1"


def save_checkpoint(model: Model, path) -> None:
    header = {
        "config": model.cfg.to_dict(),
        "params": [[name, list(t.shape)] for name, t in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for t in model.params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes {raw[:4]!r}")
    if len(raw) < 12:
        raise CheckpointFormatError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[4:12])
    try:
        header = json.loads(raw[12:12 + n].decode("utf-8"))
        cfg = ModelConfig(**header["config"])
        manifest = [(name, tuple(shape)) for name, shape in header["params"]]
    except (ValueError, KeyError, TypeError, ConfigError) as e:
        raise CheckpointFormatError(f"{path}: unreadable header ({e})") from None
    if manifest != list(param_shapes(cfg).items()):
        raise CheckpointFormatError(f"{path}: parameter manifest does not match its config")
    offset = 12 + n
    expected = sum(int(np.prod(shape)) for _, shape in manifest) * 8
    if len(raw) - offset != expected:
        raise CheckpointFormatError(f"{path}: expected {expected} data bytes, found {len(raw) - offset}")
    params = {}
    for name, shape in manifest:
        size = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape).astype(np.float64)
        offset += size * 8
    return Model(cfg, params)
