"""Self-describing checkpoint container.

Byte layout (all integers little-endian):

    bytes 0..3    magic ``GSR1``
    bytes 4..11   uint64 header length L
    bytes 12..12+L  UTF-8 JSON header::

        {
          "format_version": 1,
          "step": <int>,
          "meta": {...},                  # config echo, rng states, etc.
          "arrays": [{"name": str, "dtype": "<f8"|"<f4",
                      "shape": [...], "offset": int, "nbytes": int}, ...]
        }

    remaining     array payload, raw values at header-declared offsets

Writes are atomic (temp file + rename). The layout is frozen at version 1;
any change bumps ``format_version``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

MAGIC = b"GSR1"
FORMAT_VERSION = 1
_ALLOWED_DTYPES = {"<f8", "<f4"}


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    step: int
    meta: dict = field(default_factory=dict)
    arrays: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def with_prefix(self, prefix: str) -> "OrderedDict[str, np.ndarray]":
        """Sub-tree of arrays under ``prefix.``, with the prefix stripped."""
        cut = len(prefix) + 1
        return OrderedDict((k[cut:], v) for k, v in self.arrays.items()
                           if k.startswith(prefix + "."))


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], step: int,
                    meta: dict | None = None) -> None:
    entries = []
    payload = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        if dtype.str not in _ALLOWED_DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        raw = arr.astype(dtype, copy=False).tobytes()
        entries.append({"name": name, "dtype": dtype.str,
                        "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "meta": meta or {},
        "arrays": entries,
    }, sort_keys=True).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            for raw in payload:
                f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version "
                                  f"{header.get('format_version')}")
        payload = f.read()
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in header["arrays"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']!r}")
        arr = np.frombuffer(payload[start:start + n], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return Checkpoint(step=header["step"], meta=header["meta"], arrays=arrays)
