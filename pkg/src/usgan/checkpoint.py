"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"USGN"
    version u32      currently 1
    kind    u16 length + UTF-8 model kind tag
    count   u32      number of tensor entries
    entry*  u16 name length, UTF-8 name,
            u8 dtype code (0 = float32, 1 = float64),
            u8 rank, rank * u64 extents,
            raw little-endian payload

Parameters, batch-norm running stats and spectral-norm u-vectors are all
stored; save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"USGN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


def save(path, kind, arrays):
    """Write named arrays under a model kind tag."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        ktag = kind.encode()
        fh.write(struct.pack("<H", len(ktag)))
        fh.write(ktag)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype not in _CODES:
                raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
            nm = name.encode()
            fh.write(struct.pack("<H", len(nm)))
            fh.write(nm)
            fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load(path):
    """Read (kind, ordered name->array dict); validates structure, not shapes."""
    with open(path, "rb") as fh:
        data = fh.read()

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated while reading {what} at byte {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    pos = 0
    if take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic (expected {MAGIC!r})")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (klen,) = struct.unpack("<H", take(2, "kind length"))
    kind = take(klen, "kind").decode()
    (count,) = struct.unpack("<I", take(4, "entry count"))
    arrays = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"entry {i} name length"))
        name = take(nlen, f"entry {i} name").decode()
        code, rank = struct.unpack("<BB", take(2, f"{name} dtype/rank"))
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: entry {name} has unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, f"{name} extents"))
        dtype = _DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        payload = take(n_bytes, f"{name} payload")
        arrays[name] = np.frombuffer(payload, dtype).reshape(shape).copy()
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes after last entry")
    return kind, arrays
