"""Binary checkpoint: magic, header length, JSON header, raw float64 arrays.

    b"AVCKPT01" | uint64 LE header length | UTF-8 JSON header | array bytes

The header records ``config``, ``arrays`` (name, shape, byte offset relative
to the data block) and free-form JSON ``extras`` (step, optimizer step,
sampler RNG state, ...). Arrays are little-endian ``<f8``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .patching import ConfigError

MAGIC = b"AVCKPT01"


def save(path, config: dict, arrays: dict[str, np.ndarray], extras: dict | None = None) -> Path:
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"config": config, "arrays": entries, "extras": extras or {}}).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)  # never leave a half-written checkpoint behind
    return path


def load(path):
    """Return ``(config, arrays, extras)``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"checkpoint {path} not found") from None
    if raw[:8] != MAGIC:
        raise ConfigError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode())
    data = memoryview(raw)[16 + hlen :]
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return header["config"], arrays, header.get("extras", {})
