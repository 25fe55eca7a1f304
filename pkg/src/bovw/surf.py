"""Scale-space interest point detection and 64-dim descriptors.

Blob-like structures are detected as local maxima of an approximated
determinant of Hessian, computed with integral-image box filters at a
ladder of filter sizes (9, 15, 21, 27, then stride-doubled per octave).
Each kept point gets a 64-component descriptor built from Haar wavelet
responses on a 4x4 grid of subregions covering a 20-scale window,
optionally rotated to a dominant orientation.

All filters use clamped box sums, so responses are defined at every
pixel; border effects are excluded by margin tests instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ImageTooSmallError, WindowOutOfBoundsError
from .imgio import IntegralImage, clipped_box_sum

BASE_FILTER_SIZE = 9
# Relative weight balancing the cross-derivative box approximation.
DXY_WEIGHT = 0.9
# Haar responses below this are summed-area rounding dust, not signal
# (intensities live in [0, 1] so real edges respond orders louder).
_RESPONSE_DUST = 1e-9


def scale_for_size(filter_size: float) -> float:
    """Gaussian sigma approximated by a box filter of the given size."""
    return 1.2 * filter_size / BASE_FILTER_SIZE


@dataclass(frozen=True)
class DetectorParams:
    """Detection ladder and threshold settings.

    ``hessian_threshold`` applies to area-normalized responses on
    [0, 1] intensities.  ``upright`` skips orientation assignment and
    fixes orientation = 0, the default for upright corpora.
    """

    octaves: int = 4
    levels_per_octave: int = 4
    hessian_threshold: float = 1e-4
    upright: bool = True

    def __post_init__(self):
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if self.levels_per_octave < 3:
            raise ValueError("levels_per_octave must be >= 3 (non-max suppression needs 3 scales)")
        if not (self.hessian_threshold > 0):
            raise ValueError("hessian_threshold must be positive")

    def filter_sizes(self) -> list[list[int]]:
        """Per-octave filter sizes: start 9, step 6, stride doubling per octave."""
        ladder = []
        base = BASE_FILTER_SIZE
        for o in range(self.octaves):
            step = 6 << o
            ladder.append([base + i * step for i in range(self.levels_per_octave)])
            base = ladder[-1][1] if self.levels_per_octave > 1 else base + step
        return ladder


@dataclass(frozen=True)
class InterestPoint:
    """A detected scale-space blob.

    ``scale`` is the sigma of the approximated Gaussian; ``strength``
    the determinant-of-Hessian response at the detected maximum;
    ``laplacian_sign`` the sign of the filter trace (bright vs dark blob).
    """

    x: float
    y: float
    scale: float
    strength: float
    orientation: float = 0.0
    laplacian_sign: int = 1


@dataclass(frozen=True, eq=False)
class Descriptor:
    """64-component neighborhood descriptor, L2-normalized unless degenerate."""

    values: np.ndarray
    source: InterestPoint

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (64,):
            raise ValueError(f"descriptor must have 64 components, got {v.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def degenerate(self) -> bool:
        return not self.values.any()


# --- Hessian box filters -----------------------------------------------------

def _hessian_at(ii: IntegralImage, xs, ys, size: int):
    """Area-normalized (det, trace) of the box-filter Hessian at (xs, ys).

    ``xs``/``ys`` may be arrays (broadcast together).  The second
    derivative filters are the classic three-lobe boxes (+1, -2, +1) of
    lobe height size/3 and width 2*size/3 - 1; the cross filter uses
    four size/3 square lobes offset one pixel from the center.
    """
    lobe = size // 3
    half = size // 2
    edge = lobe - 1          # half-extent of the (2*lobe - 1) wide dimension
    mid = (lobe - 1) // 2    # half-extent of the middle lobe (lobe is odd)
    area = float(size * size)

    def box(dx0, dy0, dx1, dy1):
        return clipped_box_sum(ii, xs + dx0, ys + dy0, xs + dx1, ys + dy1)

    dyy = box(-edge, -half, edge, half) - 3.0 * box(-edge, -mid, edge, mid)
    dxx = box(-half, -edge, half, edge) - 3.0 * box(-mid, -edge, mid, edge)
    dxy = (
        box(-lobe, -lobe, -1, -1) + box(1, 1, lobe, lobe)
        - box(1, -lobe, lobe, -1) - box(-lobe, 1, -1, lobe)
    )
    dxx = dxx / area
    dyy = dyy / area
    dxy = dxy / area
    det = dxx * dyy - (DXY_WEIGHT * dxy) ** 2
    return det, dxx + dyy


def hessian_response(ii: IntegralImage, x: int, y: int, filter_size: int):
    """Determinant response and Laplacian sign of one filter at one pixel.

    ``filter_size`` must belong to the ladder 9 + 6k.  The filter
    footprint is clamped at image borders, so the response is defined
    everywhere.  Returns ``(det, laplacian_sign)`` with sign in {-1, +1}.
    """
    if filter_size < BASE_FILTER_SIZE or (filter_size - BASE_FILTER_SIZE) % 6 != 0:
        raise ValueError(f"filter_size must be 9 + 6k, got {filter_size}")
    det, trace = _hessian_at(ii, int(x), int(y), filter_size)
    return float(det), (1 if trace >= 0 else -1)


def _response_maps(ii: IntegralImage, size: int):
    xs = np.arange(ii.width)[None, :]
    ys = np.arange(ii.height)[:, None]
    return _hessian_at(ii, xs, ys, size)


_NEIGHBOR_OFFSETS = [
    (ds, dy, dx)
    for ds in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dx in (-1, 0, 1)
    if (ds, dy, dx) != (0, 0, 0)
]


def _refine_maximum(stack: np.ndarray, s: int, y: int, x: int):
    """3-d quadratic fit around a discrete maximum.

    Returns the (dx, dy, ds) offset, zeroed when the fit is singular or
    steps more than half a sample in any axis.
    """
    d = stack
    g = 0.5 * np.array([
        d[s, y, x + 1] - d[s, y, x - 1],
        d[s, y + 1, x] - d[s, y - 1, x],
        d[s + 1, y, x] - d[s - 1, y, x],
    ])
    c = d[s, y, x]
    hxx = d[s, y, x + 1] - 2 * c + d[s, y, x - 1]
    hyy = d[s, y + 1, x] - 2 * c + d[s, y - 1, x]
    hss = d[s + 1, y, x] - 2 * c + d[s - 1, y, x]
    hxy = 0.25 * (d[s, y + 1, x + 1] - d[s, y + 1, x - 1] - d[s, y - 1, x + 1] + d[s, y - 1, x - 1])
    hxs = 0.25 * (d[s + 1, y, x + 1] - d[s + 1, y, x - 1] - d[s - 1, y, x + 1] + d[s - 1, y, x - 1])
    hys = 0.25 * (d[s + 1, y + 1, x] - d[s + 1, y - 1, x] - d[s - 1, y + 1, x] + d[s - 1, y - 1, x])
    hess = np.array([[hxx, hxy, hxs], [hxy, hyy, hys], [hxs, hys, hss]])
    try:
        offset = np.linalg.solve(hess, -g)
    except np.linalg.LinAlgError:
        return 0.0, 0.0, 0.0
    if not np.isfinite(offset).all() or np.abs(offset).max() > 0.5:
        return 0.0, 0.0, 0.0
    return float(offset[0]), float(offset[1]), float(offset[2])


def detect_interest_points(ii: IntegralImage, params: DetectorParams | None = None) -> list[InterestPoint]:
    """Find strict 3x3x3 scale-space maxima of the determinant response.

    Points are strict local maxima over their octave's scale triple,
    exceed ``hessian_threshold``, sit at least one half filter width
    inside the border, and are refined by a quadratic fit.  Output is
    sorted by strength descending, ties by (y, x, scale) ascending.
    """
    if params is None:
        params = DetectorParams()
    w, h = ii.width, ii.height
    if w < BASE_FILTER_SIZE or h < BASE_FILTER_SIZE:
        raise ImageTooSmallError(f"image {w}x{h} is smaller than the {BASE_FILTER_SIZE} px base filter")

    maps: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    points: list[InterestPoint] = []
    seen: set[tuple[int, int, int]] = set()
    for sizes in params.filter_sizes():
        for size in sizes:
            if size not in maps:
                maps[size] = _response_maps(ii, size)
        stack = np.stack([maps[size][0] for size in sizes])
        step = sizes[1] - sizes[0]
        for s in range(1, len(sizes) - 1):
            # Margin from the next level up keeps all compared responses
            # free of border clamping.
            m = sizes[s + 1] // 2 + 1
            if h - 2 * m <= 0 or w - 2 * m <= 0:
                continue
            center = stack[s, m:h - m, m:w - m]
            ok = center > params.hessian_threshold
            if not ok.any():
                continue
            for ds, dy, dx in _NEIGHBOR_OFFSETS:
                np.logical_and(ok, center > stack[s + ds, m + dy:h - m + dy, m + dx:w - m + dx], out=ok)
                if not ok.any():
                    break
            for yy, xx in zip(*np.nonzero(ok)):
                y, x = int(yy) + m, int(xx) + m
                key = (sizes[s], y, x)
                if key in seen:
                    continue
                seen.add(key)
                ox, oy, os_ = _refine_maximum(stack, s, y, x)
                size_interp = sizes[s] + os_ * step
                trace = maps[sizes[s]][1][y, x]
                points.append(InterestPoint(
                    x=x + ox,
                    y=y + oy,
                    scale=scale_for_size(size_interp),
                    strength=float(stack[s, y, x]),
                    orientation=0.0,
                    laplacian_sign=1 if trace >= 0 else -1,
                ))
    if not params.upright:
        points = [
            InterestPoint(p.x, p.y, p.scale, p.strength, assign_orientation(ii, p), p.laplacian_sign)
            for p in points
        ]
    points.sort(key=lambda p: (-p.strength, p.y, p.x, p.scale))
    return points


# --- Haar responses ----------------------------------------------------------

def _haar_x(ii: IntegralImage, px, py, hw):
    """x-gradient Haar response (right half minus left half of a 2*hw box)."""
    left = clipped_box_sum(ii, px - hw, py - hw, px - 1, py + hw - 1)
    right = clipped_box_sum(ii, px, py - hw, px + hw - 1, py + hw - 1)
    return right - left


def _haar_y(ii: IntegralImage, px, py, hw):
    """y-gradient Haar response (bottom half minus top half of a 2*hw box)."""
    top = clipped_box_sum(ii, px - hw, py - hw, px + hw - 1, py - 1)
    bottom = clipped_box_sum(ii, px - hw, py, px + hw - 1, py + hw - 1)
    return bottom - top


def _orientation_grid(radius: int = 6):
    i, j = np.meshgrid(np.arange(-radius, radius + 1), np.arange(-radius, radius + 1))
    mask = i * i + j * j <= radius * radius
    return i[mask], j[mask]


_ORI_I, _ORI_J = _orientation_grid()
# Gaussian weighting with sigma = 2 sampling steps.
_ORI_WEIGHTS = np.exp(-(_ORI_I ** 2 + _ORI_J ** 2) / 8.0)
_ORI_WINDOW_CENTERS = 2.0 * np.pi * np.arange(72) / 72.0


def assign_orientation(ii: IntegralImage, ip: InterestPoint) -> float:
    """Dominant gradient direction around ``ip``, in [0, 2*pi).

    Haar responses of size 4*scale are sampled on a scale-spaced grid of
    radius 6 steps and Gaussian weighted; the direction is the resultant
    of the strongest pi/3 sliding sector.  A neighborhood with all-zero
    responses yields orientation 0.
    """
    s = max(1, int(round(ip.scale)))
    cx, cy = int(round(ip.x)), int(round(ip.y))
    px = cx + _ORI_I * s
    py = cy + _ORI_J * s
    hw = 2 * s
    dx = _haar_x(ii, px, py, hw) * _ORI_WEIGHTS
    dy = _haar_y(ii, px, py, hw) * _ORI_WEIGHTS
    if max(np.abs(dx).max(), np.abs(dy).max()) < _RESPONSE_DUST:
        return 0.0
    angles = np.mod(np.arctan2(dy, dx), 2.0 * np.pi)
    best_mag = -1.0
    best = (0.0, 0.0)
    for center in _ORI_WINDOW_CENTERS:
        diff = np.abs(np.mod(angles - center + np.pi, 2.0 * np.pi) - np.pi)
        mask = diff <= np.pi / 6.0
        if not mask.any():
            continue
        sx = float(dx[mask].sum())
        sy = float(dy[mask].sum())
        mag = sx * sx + sy * sy
        if mag > best_mag:
            best_mag = mag
            best = (sx, sy)
    return float(np.mod(math.atan2(best[1], best[0]), 2.0 * np.pi))


# --- descriptor --------------------------------------------------------------

_DESC_STEPS = np.arange(20) - 9.5                     # sample offsets in scale units
_DESC_U, _DESC_V = np.meshgrid(_DESC_STEPS, _DESC_STEPS)
_DESC_U = _DESC_U.ravel()
_DESC_V = _DESC_V.ravel()
_DESC_WEIGHTS = np.exp(-(_DESC_U ** 2 + _DESC_V ** 2) / (2.0 * 3.3 ** 2))
_DESC_BINS = ((_DESC_V + 10.0) // 5.0).astype(int) * 4 + ((_DESC_U + 10.0) // 5.0).astype(int)


def descriptor_margin(scale: float, orientation: float) -> float:
    """Half-width of the sampling footprint of a descriptor window."""
    c, s = abs(math.cos(orientation)), abs(math.sin(orientation))
    return 9.5 * scale * (c + s) + max(1, round(scale)) + 1


def compute_descriptor(ii: IntegralImage, ip: InterestPoint) -> Descriptor:
    """Haar-response descriptor over a 20-scale window around ``ip``.

    The window is split into 4x4 subregions; each contributes
    [sum dx, sum |dx|, sum dy, sum |dy|] of Gaussian-weighted responses
    expressed in the point's rotated frame.  The 64-vector is
    L2-normalized; a constant window yields the all-zero degenerate
    descriptor.

    Raises:
        WindowOutOfBoundsError: the sampling footprint does not fit
            inside the image.
    """
    sigma = ip.scale
    theta = ip.orientation
    m = descriptor_margin(sigma, theta)
    if ip.x - m < 0 or ip.x + m > ii.width - 1 or ip.y - m < 0 or ip.y + m > ii.height - 1:
        raise WindowOutOfBoundsError(
            f"descriptor window (half-width {m:.1f}) around ({ip.x:.1f}, {ip.y:.1f}) "
            f"exceeds {ii.width}x{ii.height}"
        )
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rel_x = sigma * (_DESC_U * cos_t - _DESC_V * sin_t)
    rel_y = sigma * (_DESC_U * sin_t + _DESC_V * cos_t)
    px = np.rint(ip.x + rel_x).astype(int)
    py = np.rint(ip.y + rel_y).astype(int)
    hw = max(1, round(sigma))
    dx = _haar_x(ii, px, py, hw)
    dy = _haar_y(ii, px, py, hw)
    if theta != 0.0:
        dx, dy = cos_t * dx + sin_t * dy, -sin_t * dx + cos_t * dy
    dx = dx * _DESC_WEIGHTS
    dy = dy * _DESC_WEIGHTS
    sums = np.column_stack([
        np.bincount(_DESC_BINS, weights=comp, minlength=16)
        for comp in (dx, np.abs(dx), dy, np.abs(dy))
    ])
    values = sums.ravel()
    norm = np.linalg.norm(values)
    if norm < _RESPONSE_DUST:
        values = np.zeros(64)
    else:
        values = values / norm
    return Descriptor(values, ip)


def extract_descriptors(ii: IntegralImage, params: DetectorParams | None = None) -> list[Descriptor]:
    """Detect, orient (unless upright) and describe all usable points.

    Points whose descriptor window exceeds the image and degenerate
    (all-zero) descriptors are dropped.
    """
    descriptors = []
    for ip in detect_interest_points(ii, params):
        try:
            d = compute_descriptor(ii, ip)
        except WindowOutOfBoundsError:
            continue
        if not d.degenerate:
            descriptors.append(d)
    return descriptors


def format_descriptors(descriptors) -> str:
    """Debug dump: one line per descriptor, 9 significant digits.

    Fields: x y scale strength orientation followed by the 64 components.
    """
    lines = []
    for d in descriptors:
        p = d.source
        head = [p.x, p.y, p.scale, p.strength, p.orientation]
        lines.append(" ".join(f"{v:.9g}" for v in [*head, *d.values]))
    return "\n".join(lines) + ("\n" if lines else "")
