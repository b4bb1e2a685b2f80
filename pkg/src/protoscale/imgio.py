"""Binary PPM (P6) and PGM (P5) serialization, 8-bit only.

Images travel as float (3, h, w) arrays in [0, 1]; label maps as small
nonnegative int grids. Readers accept '#' comments in headers; writers
never emit them.
"""

from __future__ import annotations

import numpy as np


def write_ppm(path, image):
    """Quantize a float (3, h, w) image in [0, 1] to 8-bit P6."""
    data = np.clip(np.asarray(image), 0.0, 1.0)
    _, h, w = data.shape
    pixels = np.round(data * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_pgm(path, grid):
    """Write an int grid (values 0..255) as 8-bit P5."""
    data = np.asarray(grid)
    if data.min() < 0 or data.max() > 255:
        raise ValueError(f"PGM values must be 8-bit, got range {data.min()}..{data.max()}")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.astype(np.uint8).tobytes())


def _read_header(fh, magic):
    if fh.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        token = b""
        ch = fh.read(1)
        while ch.isspace():
            ch = fh.read(1)
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        while ch and not ch.isspace():
            token += ch
            ch = fh.read(1)
        if not token:
            raise ValueError("truncated header")
        fields.append(int(token))
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"only 8-bit images supported, maxval {maxval}")
    return w, h


def read_ppm(path):
    """Read P6 into a float (3, h, w) array in [0, 1]."""
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P6")
        raw = np.frombuffer(fh.read(3 * w * h), dtype=np.uint8)
    if raw.size != 3 * w * h:
        raise ValueError(f"truncated pixel data in {path}")
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path):
    """Read P5 into an int (h, w) array."""
    with open(path, "rb") as fh:
        w, h = _read_header(fh, b"P5")
        raw = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    if raw.size != w * h:
        raise ValueError(f"truncated pixel data in {path}")
    return raw.reshape(h, w).astype(np.int64)
