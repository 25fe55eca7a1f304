"""Grayscale image loading and summed-area-table primitives.

Accepted inputs are 8-bit single-channel images: PGM "P2" (ASCII), PGM
"P5" (binary) and grayscale PNG.  Intensities are normalized to [0, 1]
at load time so downstream filter responses are independent of the
source bit depth.  Color or deeper inputs are rejected, never silently
converted.

The integral image (summed-area table) provides O(1) box sums, the
workhorse behind every box filter in the detector.  Rectangles that
stick out of the image are clamped to the image boundary, which is
equivalent to zero-padding the table lookup.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptImageError, EmptyRectangleError, UnsupportedFormatError

MAX_SIDE = 16384

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel image with intensities in [0, 1].

    ``pixels`` is a read-only float64 array of shape (height, width).
    """

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise CorruptImageError("pixel grid must be a non-empty 2-d array")
        if p.shape[0] > MAX_SIDE or p.shape[1] > MAX_SIDE:
            raise UnsupportedFormatError(
                f"image exceeds the {MAX_SIDE} px per-side limit: {p.shape[1]}x{p.shape[0]}"
            )
        if not np.isfinite(p).all():
            raise CorruptImageError("pixels contain non-finite values")
        if p.min() < 0.0 or p.max() > 1.0:
            raise CorruptImageError("intensities must lie in [0, 1]")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class IntegralImage:
    """Summed-area table: ``table[y, x]`` = sum of pixels with row <= y, col <= x."""

    table: np.ndarray
    # Zero-padded copy (one extra leading row/column) used for branch-free
    # corner lookups; derived, not part of the public contract.
    _padded: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.ascontiguousarray(self.table, dtype=np.float64)
        t.flags.writeable = False
        object.__setattr__(self, "table", t)
        padded = np.zeros((t.shape[0] + 1, t.shape[1] + 1), dtype=np.float64)
        padded[1:, 1:] = t
        padded.flags.writeable = False
        object.__setattr__(self, "_padded", padded)

    @property
    def width(self) -> int:
        return self.table.shape[1]

    @property
    def height(self) -> int:
        return self.table.shape[0]


def integral_image(img: GrayImage) -> IntegralImage:
    """Build the summed-area table of ``img``."""
    return IntegralImage(np.cumsum(np.cumsum(img.pixels, axis=0), axis=1))


def clipped_box_sum(ii: IntegralImage, x0, y0, x1, y1):
    """Sum of pixels in the inclusive rectangle [x0, x1] x [y0, y1].

    Coordinates may be scalars or arrays and may fall outside the image;
    the rectangle is clamped to the image and a fully outside rectangle
    sums to 0.  Callers must ensure x0 <= x1 and y0 <= y1.
    """
    p = ii._padded
    w, h = ii.width, ii.height
    xa = np.clip(x0, 0, w)
    xb = np.clip(np.asarray(x1) + 1, 0, w)
    ya = np.clip(y0, 0, h)
    yb = np.clip(np.asarray(y1) + 1, 0, h)
    return p[yb, xb] - p[ya, xb] - p[yb, xa] + p[ya, xa]


def box_sum(ii: IntegralImage, x0: int, y0: int, x1: int, y1: int) -> float:
    """Sum of pixels in the inclusive rectangle [x0, x1] x [y0, y1].

    Rectangles partially outside the image are clamped to the boundary.

    Raises:
        ValueError: if x0 > x1 or y0 > y1.
        EmptyRectangleError: if the rectangle lies entirely outside the image.
    """
    if x0 > x1 or y0 > y1:
        raise ValueError(f"inverted rectangle: ({x0},{y0})-({x1},{y1})")
    if x1 < 0 or y1 < 0 or x0 >= ii.width or y0 >= ii.height:
        raise EmptyRectangleError(
            f"rectangle ({x0},{y0})-({x1},{y1}) lies outside {ii.width}x{ii.height}"
        )
    return float(clipped_box_sum(ii, x0, y0, x1, y1))


# --- file loading ------------------------------------------------------------

def load_grayscale(path) -> GrayImage:
    """Load an 8-bit grayscale image (PGM P2/P5 or PNG) from ``path``.

    Intensities are divided by the format's declared maximum value.

    Raises:
        FileNotFoundError: missing file.
        UnsupportedFormatError: color, paletted or >8-bit input, or an
            unrecognized container.
        CorruptImageError: header/payload mismatch.
    """
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P2", b"P5"):
        return _parse_pgm(data, path)
    if data[:8] == _PNG_MAGIC:
        return _load_png(path)
    raise UnsupportedFormatError(f"{path}: not a PGM (P2/P5) or PNG file")


def save_pgm(img: GrayImage, path, binary: bool = True) -> None:
    """Write ``img`` as an 8-bit PGM (P5 if ``binary``, else P2).

    Intensities are quantized with round(v * 255); images whose pixels
    already sit on the 1/255 grid round-trip exactly.
    """
    path = Path(path)
    values = np.rint(img.pixels * 255.0).astype(np.uint8)
    header = f"{'P5' if binary else 'P2'}\n{img.width} {img.height}\n255\n"
    if binary:
        path.write_bytes(header.encode("ascii") + values.tobytes())
    else:
        rows = "\n".join(" ".join(str(v) for v in row) for row in values)
        path.write_text(header + rows + "\n", encoding="ascii")


def _parse_pgm(data: bytes, path: Path) -> GrayImage:
    magic = data[:2].decode("ascii")
    # Header: magic, width, height, maxval; '#' starts a comment to end of line.
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise CorruptImageError(f"{path}: truncated PGM header")
        c = data[pos:pos + 1]
        if c == b"#":
            eol = data.find(b"\n", pos)
            pos = len(data) if eol < 0 else eol + 1
        elif c.isspace():
            pos += 1
        elif c.isdigit():
            m = re.match(rb"\d+", data[pos:])
            fields.append(int(m.group()))
            pos += m.end()
        else:
            raise CorruptImageError(f"{path}: bad PGM header byte {c!r}")
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise CorruptImageError(f"{path}: non-positive dimensions {width}x{height}")
    if width > MAX_SIDE or height > MAX_SIDE:
        raise UnsupportedFormatError(f"{path}: exceeds the {MAX_SIDE} px per-side limit")
    if maxval <= 0 or maxval > 255:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} is not 8-bit")

    if magic == "P5":
        pos += 1  # single whitespace byte after maxval
        payload = data[pos:]
        if len(payload) != width * height:
            raise CorruptImageError(
                f"{path}: P5 payload has {len(payload)} bytes, expected {width * height}"
            )
        values = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    else:
        tokens = re.sub(rb"#[^\n]*", b"", data[pos:]).split()
        if len(tokens) != width * height:
            raise CorruptImageError(
                f"{path}: P2 payload has {len(tokens)} samples, expected {width * height}"
            )
        try:
            values = np.array([int(t) for t in tokens], dtype=np.float64)
        except ValueError as exc:
            raise CorruptImageError(f"{path}: non-numeric P2 sample") from exc
    if values.min() < 0 or values.max() > maxval:
        raise CorruptImageError(f"{path}: sample outside [0, {maxval}]")
    pixels = (values / float(maxval)).reshape(height, width)
    return GrayImage(pixels)


def _load_png(path: Path) -> GrayImage:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode != "L":
                raise UnsupportedFormatError(
                    f"{path}: PNG mode {mode!r} rejected (only 8-bit grayscale 'L' accepted)"
                )
            arr = np.asarray(im, dtype=np.float64)
    except UnidentifiedImageError as exc:
        raise CorruptImageError(f"{path}: unreadable PNG") from exc
    return GrayImage(arr / 255.0)
