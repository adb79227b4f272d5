"""Raw image buffers and a binary PPM (P6) container for fixtures."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, FormatError


def image_from_buffer(buf, width: int, height: int, channels: int = 3) -> np.ndarray:
    """Row-major scalar buffer -> ``[height, width, channels]`` float array."""
    arr = np.asarray(buf, dtype=np.float64).reshape(-1)
    if arr.size != width * height * channels:
        raise DimensionError(f"buffer of {arr.size} scalars does not match {width}x{height}x{channels}")
    return arr.reshape(height, width, channels)


def encode_ppm(img: np.ndarray) -> bytes:
    """``[h, w, 3]`` floats in [0, 1] -> P6 bytes (8-bit, rounded)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"PPM needs [h, w, 3], got {img.shape}")
    h, w = img.shape[:2]
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def _tokens(data: bytes):
    """Yield (token, end_offset) for header fields, skipping comments."""
    pos = 0
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            start = pos
            while pos < n and not data[pos : pos + 1].isspace():
                pos += 1
            yield data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    toks = _tokens(data)
    try:
        magic, _ = next(toks)
        w, _ = next(toks)
        h, _ = next(toks)
        maxval, end = next(toks)
    except StopIteration as e:
        raise FormatError("truncated PPM header") from e
    if magic != b"P6":
        raise FormatError(f"unsupported image magic {magic!r}; expected b'P6'")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as e:
        raise FormatError("non-numeric PPM header field") from e
    if not 0 < maxval < 256:
        raise FormatError(f"unsupported maxval {maxval}")
    body = data[end + 1 :]
    need = w * h * 3
    if len(body) != need:
        raise FormatError(f"PPM body has {len(body)} bytes, expected {need}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / maxval


def write_ppm(path, img: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_ppm(img))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_ppm(f.read())
