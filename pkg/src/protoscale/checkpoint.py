"""Little-endian binary checkpoints with integrity checking.

Layout: 8-byte magic ``PSCALE01``, format version u32, record count u64,
then per record: name length u64, utf-8 name, rank u64, one u64 per dim,
the f64 payload; finally a CRC32 (u32) over every byte after the version
field. Records are written in sorted name order so identical state always
produces identical bytes.

Values are all f64. Integers ride along exactly (they stay below 2^53);
RNG state words are bit-cast, not converted, so they survive the trip.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import CorruptCheckpointError

MAGIC = b"PSCALE01"
FORMAT_VERSION = 1


def save_checkpoint(path, arrays):
    """Write name -> float64 ndarray records; order independent of input."""
    body = bytearray()
    body += struct.pack("<Q", len(arrays))
    for name in sorted(arrays):
        encoded = name.encode("utf-8")
        # ascontiguousarray would promote rank-0 arrays to rank 1.
        arr = np.asarray(arrays[name], dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        body += struct.pack("<Q", len(encoded))
        body += encoded
        body += struct.pack("<Q", arr.ndim)
        body += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(bytes(body))))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError(f"truncated checkpoint {self.path}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path):
    """Read back a name -> ndarray dict, verifying magic, version, CRC."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path} is not a checkpoint (bad magic)")
    version = struct.unpack("<I", blob[8:12])[0]
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}")
    body, (stored_crc,) = blob[12:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != stored_crc:
        raise CorruptCheckpointError(f"CRC mismatch in {path}")
    reader = _Reader(body, path)
    count = reader.u64()
    arrays = {}
    for _ in range(count):
        name = reader.take(reader.u64()).decode("utf-8")
        rank = reader.u64()
        shape = tuple(reader.u64() for _ in range(rank))
        size = 1
        for dim in shape:
            size *= dim
        payload = reader.take(8 * size)
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if reader.pos != len(body):
        raise CorruptCheckpointError(f"trailing bytes in {path}")
    return arrays


def pack_rng_state(generator):
    """Bit-cast a PCG64 generator's full state into six f64 words."""
    state = generator.bit_generator.state
    inner = state["state"]
    words = np.empty(6, dtype=np.uint64)
    mask = (1 << 64) - 1
    words[0] = inner["state"] >> 64
    words[1] = inner["state"] & mask
    words[2] = inner["inc"] >> 64
    words[3] = inner["inc"] & mask
    words[4] = state["has_uint32"]
    words[5] = state["uinteger"]
    return words.view(np.float64).copy()


def unpack_rng_state(array):
    """Inverse of pack_rng_state: a fresh generator at the stored position."""
    words = np.ascontiguousarray(array, dtype=np.float64).view(np.uint64)
    generator = np.random.default_rng(0)
    generator.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {
            "state": (int(words[0]) << 64) | int(words[1]),
            "inc": (int(words[2]) << 64) | int(words[3]),
        },
        "has_uint32": int(words[4]),
        "uinteger": int(words[5]),
    }
    return generator
