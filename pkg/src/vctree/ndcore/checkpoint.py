"""Checkpoint serialization: JSON manifest plus a little-endian blob.

Layout of a checkpoint file:

    bytes 0..3    magic "NDC1"
    bytes 4..11   manifest length, unsigned 64-bit little-endian
    manifest      UTF-8 JSON: format, rng_seed, extra, params
                  (each param records name, shape, dtype, byte_offset)
    blob          parameter values, concatenated, little-endian

Round-trips are bit-exact for both 64-bit and 32-bit stores.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import ValidationError
from .params import ParamStore

_MAGIC = b"NDC1"


def save_checkpoint(path, store: ParamStore, extra: dict | None = None) -> None:
    names = sorted(store.names())
    entries = []
    chunks = []
    offset = 0
    for name in names:
        arr = store.get(name).data
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": le.dtype.str,
            "byte_offset": offset,
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": 1,
        "rng_seed": store.rng_seed,
        "extra": extra if extra is not None else {},
        "params": entries,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path, store: ParamStore | None = None) -> tuple[ParamStore, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValidationError(f"not a checkpoint file: bad magic {magic!r}")
        (length,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(length).decode("utf-8"))
        blob = fh.read()
    params = manifest["params"]
    if store is None:
        dtype = np.dtype(params[0]["dtype"]) if params else np.float64
        store = ParamStore(seed=manifest.get("rng_seed", 0), dtype=dtype.newbyteorder("="))
    for entry in params:
        shape = tuple(entry["shape"])
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=start).reshape(shape)
        p = store.param(entry["name"], shape, init="zeros")
        p.data[...] = arr.astype(store.dtype, copy=False)
    return store, manifest.get("extra", {})
