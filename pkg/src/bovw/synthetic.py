"""Deterministic synthetic corpora for desk-scale pipeline validation.

Four texture families with clearly different local structure: jittered
blob grids, dashed stripes, concentric rings and smoothed checkers.
Every image derives from its own counter-based RNG stream, so corpora
are bitwise reproducible regardless of generation order, and the
generator records ground-truth geometry (blob centers) usable as a
localization oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import U64_MAX
from .imgio import GrayImage, save_pgm

KNOWN_KINDS = ("blob_grid", "stripe", "ring", "checker")


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Corpus layout: which generators, how many images, size, noise, seed."""

    classes: tuple[str, ...] = KNOWN_KINDS
    images_per_class: int = 20
    image_size: int = 128
    noise: float = 0.02
    seed: int = 7

    def __post_init__(self):
        classes = tuple(self.classes)
        object.__setattr__(self, "classes", classes)
        if len(classes) < 2:
            raise ValueError("a corpus needs at least 2 classes")
        if len(set(classes)) != len(classes):
            raise ValueError(f"duplicate class kinds: {classes}")
        unknown = [c for c in classes if c not in KNOWN_KINDS]
        if unknown:
            raise ValueError(f"unknown generator kinds {unknown}; known: {KNOWN_KINDS}")
        if self.images_per_class < 4:
            raise ValueError("need at least 4 images per class")
        if self.image_size < 48:
            raise ValueError("image_size below 48 leaves no room for detection margins")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if not 0 <= self.seed <= U64_MAX:
            raise ValueError("seed must fit in u64")


@dataclass(frozen=True)
class GeneratedImage:
    """One written corpus file with its ground-truth geometry."""

    image_id: str
    class_label: str
    path: Path
    meta: dict = field(compare=False)


def _grid(n: int):
    return np.mgrid[0:n, 0:n].astype(float)


def _blob_grid(n: int, rng) -> tuple[np.ndarray, dict]:
    yy, xx = _grid(n)
    img = np.zeros((n, n))
    centers, sigmas = [], []
    for gx, gy in ((1 / 3, 1 / 3), (2 / 3, 1 / 3), (1 / 3, 2 / 3), (2 / 3, 2 / 3)):
        cx = gx * n + rng.uniform(-0.03, 0.03) * n
        cy = gy * n + rng.uniform(-0.03, 0.03) * n
        sigma = rng.uniform(0.022, 0.028) * n
        amp = rng.uniform(0.7, 0.95)
        img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))
        centers.append((cx, cy))
        sigmas.append(sigma)
    return 0.08 + img, {"centers": centers, "sigmas": sigmas}


def _stripe(n: int, rng) -> tuple[np.ndarray, dict]:
    yy, xx = _grid(n)
    theta = rng.uniform(0, math.pi)
    period = rng.uniform(0.10, 0.16) * n
    dash_period = rng.uniform(0.16, 0.24) * n
    phase_u = rng.uniform(0, 2 * math.pi)
    phase_v = rng.uniform(0, 2 * math.pi)
    u = xx * math.cos(theta) + yy * math.sin(theta)
    v = -xx * math.sin(theta) + yy * math.cos(theta)
    bars = 0.5 + 0.5 * np.tanh(3.0 * np.sin(2 * math.pi * u / period + phase_u))
    dashes = 0.5 + 0.5 * np.tanh(3.0 * np.sin(2 * math.pi * v / dash_period + phase_v))
    img = 0.12 + 0.72 * bars * dashes
    return img, {"theta": theta, "period": period, "dash_period": dash_period}


def _ring(n: int, rng) -> tuple[np.ndarray, dict]:
    yy, xx = _grid(n)
    cx = n / 2 + rng.uniform(-0.04, 0.04) * n
    cy = n / 2 + rng.uniform(-0.04, 0.04) * n
    r1 = rng.uniform(0.11, 0.15) * n
    r2 = rng.uniform(0.26, 0.31) * n
    width = rng.uniform(0.016, 0.024) * n
    d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    img = 0.10 + 0.75 * (
        np.exp(-((d - r1) ** 2) / (2 * width ** 2))
        + np.exp(-((d - r2) ** 2) / (2 * width ** 2))
    )
    return img, {"center": (cx, cy), "radii": (r1, r2), "width": width}


def _checker(n: int, rng) -> tuple[np.ndarray, dict]:
    # Rendered as a rotated lattice of alternating bright and dark bumps
    # rather than hard squares: saturated squares leave the detector with
    # near-threshold responses at some cell sizes.
    yy, xx = _grid(n)
    theta = rng.uniform(0, math.pi / 2)
    cell = rng.uniform(0.10, 0.13) * n
    sigma = 0.30 * cell
    off_u = rng.uniform(-0.5, 0.5) * cell
    off_v = rng.uniform(-0.5, 0.5) * cell
    u = xx * math.cos(theta) + yy * math.sin(theta) - off_u
    v = -xx * math.sin(theta) + yy * math.cos(theta) - off_v
    iu = np.round(u / cell)
    iv = np.round(v / cell)
    ru = u - iu * cell
    rv = v - iv * cell
    parity = 1.0 - 2.0 * (np.abs(iu + iv) % 2)
    img = 0.5 + 0.38 * parity * np.exp(-(ru ** 2 + rv ** 2) / (2 * sigma ** 2))
    return img, {"theta": theta, "cell": cell, "sigma": sigma}


_GENERATORS = {
    "blob_grid": _blob_grid,
    "stripe": _stripe,
    "ring": _ring,
    "checker": _checker,
}


def generate_image(kind: str, size: int, noise: float, rng) -> tuple[GrayImage, dict]:
    """Render one image of the given family, plus its geometry record."""
    if kind not in _GENERATORS:
        raise ValueError(f"unknown generator kind {kind!r}")
    pixels, meta = _GENERATORS[kind](size, rng)
    if noise > 0:
        pixels = pixels + rng.normal(0.0, noise, pixels.shape)
    return GrayImage(np.clip(pixels, 0.0, 1.0)), meta


def corpus_image(spec: SyntheticCorpusSpec, class_index: int, image_index: int):
    """The (image, meta) pair a corpus write would produce at this slot."""
    rng = np.random.default_rng([spec.seed, class_index, image_index])
    return generate_image(spec.classes[class_index], spec.image_size, spec.noise, rng)


def generate_corpus(spec: SyntheticCorpusSpec, root) -> list[GeneratedImage]:
    """Write the corpus as <root>/<class>/<nnnn>.pgm and return its records."""
    root = Path(root)
    out = []
    for ci, kind in enumerate(spec.classes):
        class_dir = root / kind
        class_dir.mkdir(parents=True, exist_ok=True)
        for ii in range(spec.images_per_class):
            image, meta = corpus_image(spec, ci, ii)
            path = class_dir / f"{ii:04d}.pgm"
            save_pgm(image, path)
            out.append(GeneratedImage(
                image_id=f"{kind}/{ii:04d}", class_label=kind, path=path, meta=meta,
            ))
    return out
