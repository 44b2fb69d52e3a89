"""Versioned binary container used for checkpoints and warm-start snapshots.

Layout: 8-byte magic, uint32 version, uint64 header length, UTF-8 JSON header,
then the arrays back to back as little-endian float64 in header order. All
integers are little-endian.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"UNSTBIN\x00"
VERSION = 1
DTYPE = "<f8"


class FormatError(ValueError):
    pass


def write(path, kind: str, meta: dict, arrays: dict):
    names = list(arrays)
    header = {"kind": kind, "meta": meta, "byteorder": "little", "dtype": DTYPE,
              "arrays": [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names]}
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype=DTYPE).tobytes())
    os.replace(tmp, path)


def read(path, kind: str | None = None):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise FormatError(f"{path}: not an unstart binary file")
    version, n = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    header = json.loads(data[20:20 + n].decode())
    if kind is not None and header["kind"] != kind:
        raise FormatError(f"{path}: holds a {header['kind']!r}, expected {kind!r}")
    pos = 20 + n
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if pos + nbytes > len(data):
            raise FormatError(f"{path}: truncated array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(data, dtype=DTYPE, count=count, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return header["meta"], arrays
