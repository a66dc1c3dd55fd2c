"""
FFDI - Image IO Module
8-bit RGB image files: binary PPM (P6) always, PNG when pypng is installed.
In memory an image is a 3 x H x W float array in [0, 1].
"""

import io
import os

import numpy as np

from .errors import DataError
from .logger import get_logger
from .utils import atomic_write_bytes

logger = get_logger(__name__)

try:
    import png
except ImportError:  # optional backend
    png = None

_WHITESPACE = b" \t\r\n\v\f"


def quantize(image):
    """[0, 1] floats -> H x W x 3 uint8, round half up, clipped."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"expected a 3 x H x W image, got shape {image.shape}")
    scaled = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5)
    return scaled.astype(np.uint8).transpose(1, 2, 0)


def dequantize(pixels):
    return np.ascontiguousarray(pixels.transpose(2, 0, 1)).astype(np.float64) / 255.0


def encode_ppm(image):
    pixels = quantize(image)
    height, width = pixels.shape[:2]
    return f"P6\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def _next_token(payload, offset, what):
    """Skip whitespace and # comments, return (token, offset after token)."""
    length = len(payload)
    while offset < length:
        byte = payload[offset : offset + 1]
        if byte == b"#":
            end = payload.find(b"\n", offset)
            offset = length if end < 0 else end + 1
        elif byte in _WHITESPACE:
            offset += 1
        else:
            break
    start = offset
    while offset < length and payload[offset : offset + 1] not in _WHITESPACE + b"#":
        offset += 1
    if start == offset:
        raise DataError(f"PPM header ends early: missing {what} at byte {start}")
    return payload[start:offset], offset


def decode_ppm(payload, source="<ppm>"):
    if payload[:2] != b"P6":
        raise DataError(f"{source}: not a binary PPM (expected 'P6' at byte 0, got {payload[:2]!r})")
    offset = 2
    values = []
    for what in ("width", "height", "maxval"):
        token_start = offset
        token, offset = _next_token(payload, offset, what)
        try:
            values.append(int(token))
        except ValueError:
            raise DataError(f"{source}: PPM {what} is not an integer near byte {token_start}: {token[:16]!r}")
    width, height, maxval = values
    if width < 1 or height < 1:
        raise DataError(f"{source}: PPM size {width}x{height} must be positive")
    if maxval != 255:
        raise DataError(f"{source}: only 8-bit PPM (maxval 255) is supported, got maxval {maxval}")
    if offset >= len(payload) or payload[offset : offset + 1] not in _WHITESPACE:
        raise DataError(f"{source}: expected one whitespace byte after maxval at byte {offset}")
    offset += 1
    expected = width * height * 3
    available = len(payload) - offset
    if available < expected:
        raise DataError(
            f"{source}: truncated pixel data at byte {offset + available}: "
            f"expected {expected} bytes, found {available}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8, count=expected, offset=offset)
    return dequantize(pixels.reshape(height, width, 3))


def encode_png(image):
    if png is None:
        raise DataError("PNG support needs the 'pypng' package")
    pixels = quantize(image)
    height, width = pixels.shape[:2]
    buffer = io.BytesIO()
    writer = png.Writer(width=width, height=height, greyscale=False, alpha=False, bitdepth=8)
    writer.write(buffer, pixels.reshape(height, width * 3).tolist())
    return buffer.getvalue()


def decode_png(payload, source="<png>"):
    if png is None:
        raise DataError("PNG support needs the 'pypng' package")
    try:
        width, height, rows, _info = png.Reader(bytes=payload).asRGB8()
        pixels = np.vstack([np.asarray(row, dtype=np.uint8) for row in rows])
    except png.Error as exc:
        raise DataError(f"{source}: malformed PNG: {exc}")
    return dequantize(pixels.reshape(height, width, 3))


def _format_for(path):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        return "ppm"
    if ext == ".png":
        return "png"
    raise DataError(f"unsupported image extension {ext!r} for {path}; use .ppm or .png")


def write_image(path, image):
    fmt = _format_for(path)
    payload = encode_ppm(image) if fmt == "ppm" else encode_png(image)
    atomic_write_bytes(path, payload)
    return path


def read_image(path):
    fmt = _format_for(path)
    try:
        with open(path, "rb") as handle:
            payload = handle.read()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}")
    if fmt == "ppm":
        return decode_ppm(payload, source=path)
    return decode_png(payload, source=path)
