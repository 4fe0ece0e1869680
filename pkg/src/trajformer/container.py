"""Self-describing binary container for arrays: shard files and checkpoints.

Layout (all integers little-endian):
    magic: 8 bytes
    version: uint32
    meta_len: uint32, then meta_len bytes of UTF-8 JSON
    n_blocks: uint32
    per block:
        name_len: uint16, name bytes
        dtype code: uint8 (0 = float64, 1 = int64, 2 = uint8)
        ndim: uint8, then ndim uint32 dims
        raw little-endian array bytes
"""

import json
import struct

import numpy as np

SHARD_MAGIC = b"TRAJSHRD"
CKPT_MAGIC = b"TRAJCKPT"
VERSION = 1

_DTYPES = {0: "<f8", 1: "<i8", 2: "|u1"}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.int64): 1, np.dtype(np.uint8): 2}


class ContainerError(IOError):
    """Raised on malformed container files."""


def write_container(path, magic, meta, blocks):
    """Write named arrays plus a JSON meta dict. `blocks` is name -> ndarray."""
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", VERSION))
        meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks.items():
            arr = np.asarray(arr)
            if arr.dtype not in _CODES:
                arr = arr.astype(np.float64)
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr).astype(_DTYPES[_CODES[arr.dtype]]).tobytes())


def read_container(path, magic):
    """Read back (meta, blocks) written by write_container."""
    with open(path, "rb") as fh:
        got = fh.read(8)
        if got != magic:
            raise ContainerError(f"{path}: bad magic {got!r}, expected {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (n_blocks,) = struct.unpack("<I", fh.read(4))
        blocks = {}
        for _ in range(n_blocks):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            dtype = np.dtype(_DTYPES[code])
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise ContainerError(f"{path}: truncated block {name!r}")
            blocks[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        return meta, blocks
