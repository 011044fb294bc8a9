"""Bit-exact image I/O: binary Netpbm (PGM P5 / PPM P6, maxval 255) plus the
pixel-level primitives the pipeline needs (grayscale conversion, channel
replication, crop, nearest-neighbor resize).

Everything here is a pure function over immutable images, so all operations
are safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def round_half_up(x: float) -> int:
    """Round to nearest integer, ties away from zero-point-five upward."""
    return math.floor(x + 0.5)


class NetpbmError(ValueError):
    """Malformed Netpbm input. `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class GrayImage:
    """8-bit single channel image, row-major."""

    width: int
    height: int
    data: bytes

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"bad dimensions {self.width}x{self.height}")
        if len(self.data) != self.width * self.height:
            raise ValueError(
                f"data length {len(self.data)} != {self.width}x{self.height}"
            )

    def at(self, x: int, y: int) -> int:
        return self.data[y * self.width + x]


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB image, row-major interleaved triples."""

    width: int
    height: int
    data: bytes

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"bad dimensions {self.width}x{self.height}")
        if len(self.data) != self.width * self.height * 3:
            raise ValueError(
                f"data length {len(self.data)} != {self.width}x{self.height}x3"
            )

    def at(self, x: int, y: int) -> tuple[int, int, int]:
        i = (y * self.width + x) * 3
        return self.data[i], self.data[i + 1], self.data[i + 2]


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, top-left corner plus extent, in pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative corner ({self.x},{self.y})")
        if self.w < 1 or self.h < 1:
            raise ValueError(f"empty extent {self.w}x{self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def within(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height


def _read_header_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-separated header token, skipping `#` comment lines."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise NetpbmError("header truncated", pos)
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def decode_netpbm(buf: bytes) -> RgbImage | GrayImage:
    """Decode a binary PGM (P5) or PPM (P6) file, maxval 255.

    `#` comments are allowed between header tokens. Pixel data is preserved
    byte for byte. Raises NetpbmError with the byte offset on malformed
    header, wrong maxval or truncated payload.
    """
    if buf[:2] not in (b"P5", b"P6"):
        raise NetpbmError(f"bad magic {buf[:2]!r}, expected P5 or P6", 0)
    channels = 1 if buf[:2] == b"P5" else 3
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_header_token(buf, pos)
        tok_offset = pos - len(tok)
        if not tok.isdigit():
            raise NetpbmError(f"non-numeric {name} {tok!r}", tok_offset)
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise NetpbmError(f"bad dimensions {width}x{height}", 2)
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval}, only 255", pos)
    # Exactly one whitespace byte separates the header from the payload.
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise NetpbmError("missing whitespace before pixel data", pos)
    pos += 1
    expected = width * height * channels
    payload = buf[pos : pos + expected]
    if len(payload) != expected:
        raise NetpbmError(
            f"truncated pixel data, expected {expected} bytes got {len(payload)}",
            pos + len(payload),
        )
    if channels == 1:
        return GrayImage(width, height, payload)
    return RgbImage(width, height, payload)


def encode_netpbm(img: RgbImage | GrayImage) -> bytes:
    """Encode to canonical binary PGM/PPM: header tokens newline-separated."""
    magic = b"P5" if isinstance(img, GrayImage) else b"P6"
    return magic + b"\n%d %d\n255\n" % (img.width, img.height) + img.data


def to_grayscale(img: RgbImage) -> GrayImage:
    """BT.601 luma: round_half_up(0.299 R + 0.587 G + 0.114 B) per pixel."""
    px = np.frombuffer(img.data, dtype=np.uint8).reshape(-1, 3).astype(np.float64)
    luma = np.floor(0.299 * px[:, 0] + 0.587 * px[:, 1] + 0.114 * px[:, 2] + 0.5)
    luma = np.clip(luma, 0, 255).astype(np.uint8)
    return GrayImage(img.width, img.height, luma.tobytes())


def gray_to_rgb(img: GrayImage) -> RgbImage:
    """Replicate the luma value into all three channels."""
    v = np.frombuffer(img.data, dtype=np.uint8)
    return RgbImage(img.width, img.height, np.repeat(v, 3).tobytes())


def crop(img: RgbImage, r: Rect) -> RgbImage:
    """Copy the pixels of `r`. The rect must lie inside the image."""
    if not r.within(img.width, img.height):
        raise ValueError(
            f"rect {r.x},{r.y},{r.w}x{r.h} outside image {img.width}x{img.height}"
        )
    rows = []
    stride = img.width * 3
    for y in range(r.y, r.y + r.h):
        start = y * stride + r.x * 3
        rows.append(img.data[start : start + r.w * 3])
    return RgbImage(r.w, r.h, b"".join(rows))


def resize_nearest(img: RgbImage, w: int, h: int) -> RgbImage:
    """Nearest-neighbor resize: output (i,j) reads input (i*inW//w, j*inH//h)."""
    if w < 1 or h < 1:
        raise ValueError(f"bad target size {w}x{h}")
    if w == img.width and h == img.height:
        return img
    src = img.data
    in_w = img.width
    out = bytearray(w * h * 3)
    for j in range(h):
        sy = j * img.height // h
        row_base = sy * in_w
        for i in range(w):
            sx = i * in_w // w
            s = (row_base + sx) * 3
            d = (j * w + i) * 3
            out[d] = src[s]
            out[d + 1] = src[s + 1]
            out[d + 2] = src[s + 2]
    return RgbImage(w, h, bytes(out))
