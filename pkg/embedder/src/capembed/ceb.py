"""Writer for the .ceb embedding container.

Layout, all little-endian: magic b"CEB1", u32 format version (1), u32
dimension, u64 entry count; then per entry a u16 id byte length, the UTF-8
id, and `dimension` float32 values. Entries are sorted by id, so the same
inputs always produce byte-identical files. This is the wire format the
evaluation toolkit reads; see its store module for the consumer side.
"""

import struct

import numpy as np

from capembed import EmbedError

MAGIC = b"CEB1"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_ID_LEN = struct.Struct("<H")


def write_ceb(path, dimension: int, entries: dict) -> None:
    """Write {id: vector} to `path`; vectors are cast to float32 as stored."""
    if not entries:
        raise EmbedError("refusing to write an empty embedding file")
    if dimension <= 0:
        raise EmbedError(f"dimension must be positive, got {dimension}")
    arrays = {}
    for entry_id, vector in entries.items():
        if len(entry_id.encode("utf-8")) > 0xFFFF:
            raise EmbedError(f"id longer than 65535 bytes: {entry_id[:40]}...")
        arr = np.asarray(vector, dtype="<f4")
        if arr.ndim != 1 or arr.shape[0] != dimension:
            raise EmbedError(
                f"vector for {entry_id!r} has shape {arr.shape}, expected ({dimension},)"
            )
        if np.isnan(arr).any():
            raise EmbedError(f"NaN in vector for {entry_id!r}")
        arrays[entry_id] = arr

    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, dimension, len(arrays)))
        for entry_id in sorted(arrays):
            id_bytes = entry_id.encode("utf-8")
            fh.write(_ID_LEN.pack(len(id_bytes)))
            fh.write(id_bytes)
            fh.write(arrays[entry_id].tobytes())
