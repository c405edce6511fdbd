"""Binary PGM (P5) raster I/O and atomic file writes."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError


def quantize(img) -> np.ndarray:
    """[0, 1] intensities to 8-bit, rounding half up."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(img * 255.0 + 0.5).astype(np.uint8)


def encode_pgm(img) -> bytes:
    q = quantize(img)
    h, w = q.shape
    return b"P5\n%d %d\n255\n" % (w, h) + q.tobytes()


def _tokens(data: bytes, count: int) -> tuple[list[int], int]:
    pos, out = 0, []
    while len(out) < count:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PGM header")
        out.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("malformed PGM header")
    return out, pos + 1


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode an 8- or 16-bit P5 image to float64 intensities in [0, 1]."""
    if not data.startswith(b"P5"):
        raise FormatError("not a binary PGM (P5) file")
    (w, h, maxval), off = _tokens(data[2:], 3)
    off += 2
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"bad PGM dimensions {w}x{h} max {maxval}")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = w * h * dtype.itemsize
    if len(data) - off < need:
        raise FormatError(f"truncated PGM: need {need} bytes of pixels, have {len(data) - off}")
    px = np.frombuffer(data, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    return px.astype(np.float64) / maxval


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return decode_pgm(data)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def atomic_write(path, data: bytes | str):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pgm(path, img):
    atomic_write(path, encode_pgm(img))
