"""Binary netpbm (P5/P6, maxval 255) reading and writing.

Parse failures raise ParseError carrying the byte offset of the
offending data. PNG support is optional and present only when Pillow is
importable (see PNG_SUPPORTED).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from salfuse.errors import ParseError

try:
    from PIL import Image as _PILImage
    PNG_SUPPORTED = True
except ImportError:
    _PILImage = None
    PNG_SUPPORTED = False

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _skip_space(data: bytes, pos: int) -> int:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    return pos


def _read_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    pos = _skip_space(data, pos)
    start = pos
    n = len(data)
    while pos < n and data[pos:pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise ParseError(f"expected integer {what} in header", offset=start)
    return int(data[start:pos]), pos


def parse_pnm(data: bytes) -> tuple[str, np.ndarray]:
    """Decode P5/P6 bytes into ('P5', (H, W)) or ('P6', (H, W, 3)) uint8."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}, expected P5 or P6",
                         offset=0)
    width, pos = _read_int(data, 2, "width")
    height, pos = _read_int(data, pos, "height")
    maxval, pos = _read_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise ParseError(f"degenerate image size {width}x{height}", offset=2)
    if maxval != 255:
        raise ParseError(f"maxval {maxval} unsupported, only 255", offset=pos)
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise ParseError("expected single whitespace after maxval", offset=pos)
    pos += 1
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = data[pos:]
    if len(payload) < expected:
        raise ParseError(f"truncated pixel data: expected {expected} bytes, "
                         f"got {len(payload)}", offset=len(data))
    if len(payload) > expected:
        raise ParseError("trailing bytes after pixel data",
                         offset=pos + expected)
    pixels = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return magic.decode(), pixels.reshape(shape).copy()


def _read_path(path) -> bytes:
    return Path(path).read_bytes()


def load_gray(path) -> np.ndarray:
    """Single-channel image as (H, W) float64 in [0, 1] (v / 255)."""
    p = Path(path)
    if p.suffix.lower() == ".png":
        return _load_png(p, "L").astype(np.float64) / 255.0
    magic, pixels = parse_pnm(_read_path(p))
    if magic != "P5":
        raise ParseError(f"{p} holds a {magic} color image, expected P5 grayscale")
    return pixels.astype(np.float64) / 255.0


def load_rgb(path) -> np.ndarray:
    """Color image as (3, H, W) float32 in [0, 1] (v / 255)."""
    p = Path(path)
    if p.suffix.lower() == ".png":
        arr = _load_png(p, "RGB")
    else:
        magic, arr = parse_pnm(_read_path(p))
        if magic != "P6":
            raise ParseError(f"{p} holds a {magic} grayscale image, expected P6")
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)


def _load_png(path: Path, mode: str) -> np.ndarray:
    if not PNG_SUPPORTED:
        raise ParseError(f"cannot read {path}: PNG support requires Pillow")
    with _PILImage.open(path) as im:
        return np.asarray(im.convert(mode))


def to_uint8(arr: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to uint8 via round(v * 255)."""
    return np.clip(np.round(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)


def save_pgm(path, arr: np.ndarray) -> None:
    """Write an (H, W) float map in [0, 1] as binary P5."""
    q = to_uint8(arr)
    if q.ndim != 2:
        raise ValueError(f"save_pgm expects a 2-D map, got shape {q.shape}")
    h, w = q.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + q.tobytes())


def save_ppm(path, arr: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] as binary P6."""
    q = to_uint8(arr)
    if q.ndim != 3 or q.shape[0] != 3:
        raise ValueError(f"save_ppm expects (3, H, W), got shape {q.shape}")
    _, h, w = q.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h)
                           + q.transpose(1, 2, 0).tobytes())
