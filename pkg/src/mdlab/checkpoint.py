"""Named-tensor checkpoint container.

Layout: 4-byte magic, 8-byte little-endian header length, UTF-8 JSON header,
then the raw tensor payloads back to back. The header carries the format
version, arbitrary JSON metadata, and an index mapping each tensor name to
(shape, dtype, byte offset into the payload). Floats are stored little-endian
('<f4' or '<f8'), so round-trips are bit-exact and files written with the
same content are byte-identical.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataError

MAGIC = b"NTC1"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def save_checkpoint(path: str, tensors: dict[str, np.ndarray], meta: dict) -> None:
    index = {}
    payloads = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype == np.float32:
            code = "<f4"
        elif arr.dtype == np.float64:
            code = "<f8"
        else:
            raise DataError(f"checkpoint tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = arr.astype(_DTYPES[code], copy=False).tobytes()
        index[name] = {"shape": list(arr.shape), "dtype": code, "offset": offset}
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta, "index": index},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for raw in payloads:
            f.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    hlen = int.from_bytes(blob[4:12], "little")
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint header: {e}")
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: unsupported checkpoint format version {header.get('format_version')}"
        )
    payload = blob[12 + hlen:]
    tensors = {}
    for name, entry in header["index"].items():
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise DataError(f"{path}: tensor {name!r} has unknown dtype {entry['dtype']}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * dtype.itemsize
        if end > len(payload):
            raise DataError(f"{path}: payload truncated for tensor {name!r}")
        arr = np.frombuffer(payload[start:end], dtype=dtype).reshape(shape).copy()
        tensors[name] = arr
    return tensors, header["meta"]
