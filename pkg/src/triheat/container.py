"""Flat binary container for heatmap stacks, rigs and model parameters.

Byte layout (documented in docs/FORMATS.md):

    bytes 0..3   magic b"THC1"
    bytes 4..7   header length, unsigned 32-bit little-endian
    header       UTF-8 JSON: {"schema", "meta", "entries": [{name, dtype,
                 shape}, ...]}
    payload      entry arrays concatenated in header order, C-order,
                 little-endian ("f4" or "f8")

Writes are byte-deterministic: the header is serialized with sorted keys
and fixed separators.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"THC1"
CONTAINER_SCHEMA = "triheat.container/1"
_DTYPES = {"f4": "<f4", "f8": "<f8"}


def pack(arrays: dict, meta: dict = None, dtypes: dict = None) -> bytes:
    """Serialize named arrays; non-float dtypes default to "f4" storage."""
    dtypes = dtypes or {}
    entries = []
    blobs = []
    for name, array in arrays.items():
        array = np.asarray(array)
        code = dtypes.get(name, "f4")
        if code not in _DTYPES:
            raise FormatError(f"unsupported dtype code {code!r} for entry {name!r}")
        data = np.ascontiguousarray(array, dtype=_DTYPES[code])
        entries.append({"name": name, "dtype": code, "shape": list(array.shape)})
        blobs.append(data.tobytes())
    header = json.dumps(
        {"schema": CONTAINER_SCHEMA, "meta": meta or {}, "entries": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)


def unpack(blob: bytes):
    """Parse a container; returns (arrays, meta) with float64 arrays."""
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError("not a triheat container (bad magic)")
    (header_len,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + header_len:
        raise FormatError("truncated container header")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"container header is not valid JSON: {exc}") from exc
    if header.get("schema") != CONTAINER_SCHEMA:
        raise FormatError(f"unexpected container schema {header.get('schema')!r}")
    offset = 8 + header_len
    arrays = {}
    for entry in header.get("entries", []):
        try:
            name = entry["name"]
            dtype = _DTYPES[entry["dtype"]]
            shape = tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed container entry {entry!r}") from exc
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        if offset + nbytes > len(blob):
            raise FormatError(f"container payload truncated at entry {name!r}")
        arrays[name] = (
            np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += nbytes
    return arrays, header.get("meta", {})


def write_file(path, arrays: dict, meta: dict = None, dtypes: dict = None) -> None:
    with open(path, "wb") as fh:
        fh.write(pack(arrays, meta, dtypes))


def read_file(path):
    with open(path, "rb") as fh:
        return unpack(fh.read())
