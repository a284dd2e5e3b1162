"""Binary PPM (P6) and PGM (P5) codec.

Decoded images are float64 arrays of shape (H, W, C) scaled by 1/maxval.
Encoding with the same maxval reproduces the original bytes exactly.
"""

from __future__ import annotations

import re

import numpy as np

_MAGIC = {b"P6": 3, b"P5": 1}
_FORMATS = {"ppm": b"P6", "pgm": b"P5"}
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


class NetpbmError(ValueError):
    pass


def _read_header(buf: bytes) -> tuple[bytes, int, int, int, int]:
    tokens = []
    pos = 0
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise NetpbmError("malformed header: unexpected end of data")
        tokens.append(m.group(1))
        pos = m.end()
    magic, *nums = tokens
    if magic not in _MAGIC:
        raise NetpbmError(f"malformed header: unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in nums)
    except ValueError:
        raise NetpbmError(f"malformed header: non-integer field in {nums!r}") from None
    if width < 1 or height < 1:
        raise NetpbmError(f"malformed header: size {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise NetpbmError(f"unsupported maxval {maxval}")
    if pos >= len(buf) or buf[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise NetpbmError("malformed header: missing whitespace before raster")
    return magic, width, height, maxval, pos + 1


def decode_raw(buf: bytes) -> tuple[np.ndarray, int]:
    """Integer raster (H, W, C) and its maxval."""
    magic, width, height, maxval, start = _read_header(buf)
    channels = _MAGIC[magic]
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    need = count * dtype.itemsize
    if len(buf) - start < need:
        raise NetpbmError(f"truncated payload: need {need} bytes, got {len(buf) - start}")
    raster = np.frombuffer(buf, dtype=dtype, count=count, offset=start)
    if raster.max(initial=0) > maxval:
        raise NetpbmError("sample exceeds maxval")
    return raster.reshape(height, width, channels).astype(np.int64), maxval


def decode_image(buf: bytes, format: str | None = None) -> np.ndarray:
    if format is not None:
        want = _FORMATS.get(format.lower())
        if want is None:
            raise NetpbmError(f"unsupported format {format!r}")
        if buf[:2] != want:
            raise NetpbmError(f"expected {format} data, found magic {buf[:2]!r}")
    raster, maxval = decode_raw(buf)
    return raster / float(maxval)


def encode_raw(raster: np.ndarray, maxval: int = 255) -> bytes:
    raster = np.asarray(raster)
    if raster.ndim == 2:
        raster = raster[:, :, None]
    h, w, c = raster.shape
    if c not in (1, 3):
        raise NetpbmError(f"need 1 or 3 channels, got {c}")
    magic = b"P6" if c == 3 else b"P5"
    dtype = ">u2" if maxval > 255 else "u1"
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    return header + np.ascontiguousarray(raster, dtype=dtype).tobytes()


def encode_image(img: np.ndarray, maxval: int = 255) -> bytes:
    """Quantise [0, 1] floats to integers and serialise (P6 for 3 channels, P5 for 1)."""
    img = np.asarray(img, dtype=np.float64)
    if not 1 <= maxval <= 65535:
        raise NetpbmError(f"unsupported maxval {maxval}")
    raster = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(np.int64)
    return encode_raw(raster, maxval)


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_image(path, img: np.ndarray, maxval: int = 255) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_image(img, maxval))
