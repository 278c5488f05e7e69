"""Binary container for kernel weights.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"PSKWGT01"
    offset 8   4 bytes   uint32 header length H
    offset 12  H bytes   UTF-8 JSON header
    offset 12+H          payload: float32 little-endian values

The header is ``{"config": {...}, "tensors": [{"name", "shape", "offset",
"count"}, ...]}`` with tensors in sorted-name order and ``offset``/``count``
measured in float32 elements from the start of the payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .proformer import KernelConfig, KernelWeights

MAGIC = b"PSKWGT01"


def dumps_weights(w: KernelWeights) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(w.tensors):
        t = w.tensors[name]
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "count": int(t.size)})
        chunks.append(t.astype("<f4").tobytes())
        offset += int(t.size)
    header = json.dumps({"config": w.config.to_dict(), "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def loads_weights(data: bytes) -> KernelWeights:
    if data[:8] != MAGIC:
        raise ValueError("not a kernel weights container (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    payload = np.frombuffer(data, dtype="<f4", offset=12 + hlen)
    tensors = {}
    for e in header["tensors"]:
        end = e["offset"] + e["count"]
        if end > payload.size:
            raise ValueError(f"tensor {e['name']} runs past the payload")
        tensors[e["name"]] = payload[e["offset"]:end].astype(float).reshape(e["shape"])
    return KernelWeights(KernelConfig(**header["config"]), tensors)


def save_weights(w: KernelWeights, path) -> None:
    Path(path).write_bytes(dumps_weights(w))


def load_weights(path) -> KernelWeights:
    return loads_weights(Path(path).read_bytes())
