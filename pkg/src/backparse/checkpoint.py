"""Single-file parameter container.

Layout: magic ``BPG1``, little-endian uint32 format version, uint64 length
of a UTF-8 JSON manifest, the manifest, then the float64 little-endian
payloads at the manifest offsets (relative to the start of the payload
section). The manifest records ``(name, shape, offset)`` per tensor, the
RNG algorithm and seed, and free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import RNG_ALGORITHM, Tensor

MAGIC = b"BPG1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, params: dict[str, Tensor | np.ndarray], seed: int, meta: dict | None = None) -> None:
    entries = []
    offset = 0
    arrays = []
    for name, value in params.items():
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
        arrays.append(arr)
    manifest = {
        "tensors": entries,
        "rng": {"algorithm": RNG_ALGORITHM, "seed": int(seed)},
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(blob)))
        f.write(blob)
        for arr in arrays:
            f.write(arr.tobytes())
    tmp.replace(path)


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(arrays, manifest)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a BPG1 checkpoint")
    version, n = struct.unpack_from("<IQ", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = 4 + struct.calcsize("<IQ")
    manifest = json.loads(raw[start : start + n].decode("utf-8"))
    base = start + n
    arrays = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        lo = base + e["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=lo).astype(np.float64)
        arrays[e["name"]] = arr.reshape(e["shape"])
    return arrays, manifest


def load_into(path, params: dict[str, Tensor]) -> dict:
    arrays, manifest = load(path)
    missing = set(params) - set(arrays)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    for name, t in params.items():
        if arrays[name].shape != t.shape:
            raise CheckpointError(f"shape mismatch for {name}: {arrays[name].shape} vs {t.shape}")
        t.data = arrays[name].copy()
    return manifest
