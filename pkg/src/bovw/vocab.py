"""Visual vocabulary: feature pruning and seeded k-means clustering.

The vocabulary is built from the training images only: each image keeps
its strongest descriptors, the pooled survivors fix the per-dimension
scales of the standardized Euclidean distance, and Lloyd's algorithm
clusters them in that scaled space.  Centroids are stored unscaled; the
scales travel with the vocabulary so assignment always happens in the
space the clustering saw.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyImageError,
    InsufficientDataError,
    NonFiniteInputError,
    TooFewPointsError,
)
from .fileio import U64_MAX, ByteReader, ByteWriter, atomic_write_bytes

VOCAB_MAGIC = b"BOVWVOC1"
# Floor for per-dimension standard deviations; keeps constant dimensions
# from producing infinite scales.
STD_FLOOR = 1e-8
_ASSIGN_CHUNK = 512


@dataclass(frozen=True, eq=False)
class ImageFeatures:
    """All usable descriptors of one image.

    ``positions`` rows are (y, x, scale), used only for deterministic
    tie-breaking and debugging.  ``descriptors`` may be empty for images
    with no usable structure; such images cannot enter pruning.
    """

    image_id: str
    label: str | None
    descriptors: np.ndarray
    strengths: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.descriptors, dtype=np.float64)
        s = np.ascontiguousarray(self.strengths, dtype=np.float64)
        p = np.ascontiguousarray(self.positions, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("descriptors must be a 2-d array")
        n = d.shape[0]
        if s.shape != (n,) or p.shape != (n, 3):
            raise ValueError("strengths and positions must match the descriptor count")
        if not (np.isfinite(d).all() and np.isfinite(s).all() and np.isfinite(p).all()):
            raise NonFiniteInputError(f"image {self.image_id!r}: non-finite feature data")
        if n and s.min() < 0:
            raise ValueError(f"image {self.image_id!r}: negative strengths")
        if n and not d.any(axis=1).all():
            raise ValueError(f"image {self.image_id!r}: degenerate all-zero descriptor")
        for name, arr in (("descriptors", d), ("strengths", s), ("positions", p)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_features(self) -> int:
        return self.descriptors.shape[0]


def features_from_descriptors(image_id: str, label, descriptors) -> ImageFeatures:
    """Bundle extracted descriptors (see surf) into an ImageFeatures record."""
    n = len(descriptors)
    mat = np.zeros((n, 64))
    strengths = np.zeros(n)
    positions = np.zeros((n, 3))
    for i, d in enumerate(descriptors):
        mat[i] = d.values
        p = d.source
        strengths[i] = p.strength
        positions[i] = (p.y, p.x, p.scale)
    return ImageFeatures(image_id, label, mat, strengths, positions)


@dataclass(frozen=True, eq=False)
class FeatureBag:
    """Per-image feature sets keyed by unique image id, held in id order."""

    images: tuple[ImageFeatures, ...]

    def __post_init__(self):
        imgs = tuple(sorted(self.images, key=lambda f: f.image_id))
        ids = [f.image_id for f in imgs]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image ids in feature bag")
        object.__setattr__(self, "images", imgs)

    def pooled_descriptors(self) -> np.ndarray:
        mats = [f.descriptors for f in self.images if f.n_features]
        if not mats:
            return np.zeros((0, 64))
        return np.vstack(mats)


def prune_strongest(bag: FeatureBag, fraction: float) -> FeatureBag:
    """Keep each image's ceil(fraction * n) strongest descriptors.

    Ties on strength break by (y, x, scale) ascending; surviving rows
    stay in their original order.

    Raises:
        EmptyImageError: an image entered pruning with no descriptors.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    pruned = []
    for f in bag.images:
        n = f.n_features
        if n == 0:
            raise EmptyImageError(f"image {f.image_id!r} has no descriptors to prune")
        m = min(n, max(1, math.ceil(fraction * n - 1e-9)))
        order = np.lexsort((
            f.positions[:, 2], f.positions[:, 1], f.positions[:, 0], -f.strengths,
        ))
        keep = np.sort(order[:m])
        pruned.append(ImageFeatures(
            f.image_id, f.label,
            f.descriptors[keep], f.strengths[keep], f.positions[keep],
        ))
    return FeatureBag(tuple(pruned))


def standardization(descriptors: np.ndarray) -> np.ndarray:
    """Inverse population standard deviation per dimension, floored at 1e-8.

    Raises:
        InsufficientDataError: fewer than 2 descriptors.
        NonFiniteInputError: NaN or infinity in the pool.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError(
            f"need at least 2 descriptors to standardize, got {0 if x.ndim != 2 else x.shape[0]}"
        )
    if not np.isfinite(x).all():
        raise NonFiniteInputError("descriptor pool contains non-finite values")
    return 1.0 / np.maximum(x.std(axis=0), STD_FLOOR)


@dataclass(frozen=True)
class KMeansStats:
    """Convergence record of the winning k-means run."""

    iterations: int
    final_distortion: float
    seed: int
    distortion_history: tuple[float, ...]
    restarts: int


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """k visual words with the scales of their standardized distance."""

    centroids: np.ndarray
    dim_scales: np.ndarray
    stats: KMeansStats | None = None

    def __post_init__(self):
        c = np.ascontiguousarray(self.centroids, dtype=np.float64)
        s = np.ascontiguousarray(self.dim_scales, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("centroids must be a non-empty 2-d array")
        if s.shape != (c.shape[1],):
            raise ValueError("dim_scales length must equal the descriptor dimension")
        if not np.isfinite(c).all():
            raise NonFiniteInputError("non-finite centroid")
        if not np.isfinite(s).all() or s.min() <= 0:
            raise ValueError("dim_scales must be positive and finite")
        if len(np.unique(c, axis=0)) != c.shape[0]:
            raise ValueError("centroids must be pairwise distinct")
        c.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "dim_scales", s)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _scaled_sq_distances(xs: np.ndarray, cs: np.ndarray) -> np.ndarray:
    """Exact pairwise squared distances, chunked to bound memory."""
    n = xs.shape[0]
    out = np.empty((n, cs.shape[0]))
    for start in range(0, n, _ASSIGN_CHUNK):
        block = xs[start:start + _ASSIGN_CHUNK]
        out[start:start + _ASSIGN_CHUNK] = ((block[:, None, :] - cs[None, :, :]) ** 2).sum(-1)
    return out


def kmeans(
    descriptors: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-6,
    dim_scales: np.ndarray | None = None,
    n_restarts: int = 1,
) -> Vocabulary:
    """Lloyd's algorithm under the standardized Euclidean distance.

    Initial centroids are k distinct descriptors sampled without
    replacement by ``default_rng(seed + restart)``.  Iterations stop when
    every centroid moves less than ``tol`` in the scaled space or after
    ``max_iter`` rounds; empty clusters are re-seeded from the point
    currently farthest from its centroid.  With several restarts the run
    of smallest final distortion wins, earliest restart on ties.

    ``dim_scales=None`` standardizes internally from ``descriptors``;
    passing ``np.ones(dim)`` gives plain Euclidean clustering.

    Raises:
        NonFiniteInputError: non-finite descriptors.
        TooFewPointsError: k exceeds the number of distinct descriptors.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("descriptors must be a non-empty 2-d array")
    if not np.isfinite(x).all():
        raise NonFiniteInputError("descriptors contain non-finite values")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if n_restarts < 1:
        raise ValueError(f"n_restarts must be >= 1, got {n_restarts}")
    if not 0 <= seed <= U64_MAX - n_restarts:
        raise ValueError("seed must fit in u64 (artifact format)")

    if dim_scales is None:
        scales = 1.0 / np.maximum(x.std(axis=0), STD_FLOOR)
    else:
        scales = np.asarray(dim_scales, dtype=np.float64)
        if scales.shape != (x.shape[1],) or not np.isfinite(scales).all() or scales.min() <= 0:
            raise ValueError("dim_scales must be positive finite, one per dimension")

    xs = x * scales
    distinct = np.unique(xs, axis=0)
    if k > distinct.shape[0]:
        raise TooFewPointsError(
            f"k={k} exceeds the {distinct.shape[0]} distinct descriptors"
        )

    best = None
    for restart in range(n_restarts):
        rng = np.random.default_rng(seed + restart)
        centroids = distinct[np.sort(rng.choice(distinct.shape[0], size=k, replace=False))].copy()
        history = []
        for _ in range(max_iter):
            d2 = _scaled_sq_distances(xs, centroids)
            labels = np.argmin(d2, axis=1)
            point_d2 = d2[np.arange(len(labels)), labels]
            counts = np.bincount(labels, minlength=k)
            while (counts == 0).any():
                empty = int(np.flatnonzero(counts == 0)[0])
                movable = np.where(counts[labels] >= 2, point_d2, -np.inf)
                far = int(np.argmax(movable))
                counts[labels[far]] -= 1
                labels[far] = empty
                counts[empty] += 1
                point_d2[far] = -np.inf
            new_centroids = np.zeros_like(centroids)
            np.add.at(new_centroids, labels, xs)
            new_centroids /= counts[:, None]
            history.append(float(
                ((xs - new_centroids[labels]) ** 2).sum(axis=1).mean()
            ))
            shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
            centroids = new_centroids
            if shift < tol:
                break
        final_d2 = _scaled_sq_distances(xs, centroids)
        final_distortion = float(final_d2.min(axis=1).mean())
        if best is None or final_distortion < best[0]:
            best = (final_distortion, centroids, tuple(history))

    final_distortion, centroids, history = best
    stats = KMeansStats(
        iterations=len(history),
        final_distortion=final_distortion,
        seed=seed,
        distortion_history=history,
        restarts=n_restarts,
    )
    return Vocabulary(centroids / scales, scales, stats)


def assign_words(vocabulary: Vocabulary, descriptors: np.ndarray) -> np.ndarray:
    """Nearest visual word per row, lowest word id on exact ties.

    Raises:
        NonFiniteInputError: non-finite descriptor components.
        ValueError: dimension mismatch with the vocabulary.
    """
    x = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    if x.shape[1] != vocabulary.dim:
        raise ValueError(
            f"descriptors have {x.shape[1]} dimensions, vocabulary expects {vocabulary.dim}"
        )
    if not np.isfinite(x).all():
        raise NonFiniteInputError("descriptors contain non-finite values")
    if x.shape[0] == 0:
        return np.zeros(0, dtype=int)
    d2 = _scaled_sq_distances(x * vocabulary.dim_scales, vocabulary.centroids * vocabulary.dim_scales)
    return np.argmin(d2, axis=1)


def assign_word(vocabulary: Vocabulary, descriptor) -> int:
    """Visual word of a single descriptor (array or surf.Descriptor)."""
    values = getattr(descriptor, "values", descriptor)
    return int(assign_words(vocabulary, np.asarray(values).reshape(1, -1))[0])


def build_vocabulary(
    bag: FeatureBag,
    k: int,
    seed: int,
    prune_fraction: float = 0.8,
    max_iter: int = 100,
    tol: float = 1e-6,
    n_restarts: int = 1,
) -> Vocabulary:
    """Prune, standardize and cluster a training feature bag.

    Raises:
        ValueError: k < 2 (a usable vocabulary needs at least 2 words).
        EmptyImageError, InsufficientDataError, TooFewPointsError:
            propagated from the stages.
    """
    if k < 2:
        raise ValueError(f"a vocabulary needs k >= 2 words, got {k}")
    pooled = prune_strongest(bag, prune_fraction).pooled_descriptors()
    scales = standardization(pooled)
    return kmeans(pooled, k, seed, max_iter=max_iter, tol=tol,
                  dim_scales=scales, n_restarts=n_restarts)


# --- artifact format ---------------------------------------------------------

def write_vocabulary(vocabulary: Vocabulary, path) -> None:
    """Serialize to the binary vocabulary format (magic BOVWVOC1)."""
    stats = vocabulary.stats
    w = ByteWriter(VOCAB_MAGIC)
    w.u32(vocabulary.k)
    w.u32(vocabulary.dim)
    w.f64_array(vocabulary.dim_scales)
    w.f64_array(vocabulary.centroids)
    w.u64(stats.seed if stats else 0)
    w.f64(stats.final_distortion if stats else float("nan"))
    atomic_write_bytes(path, w.getvalue())


def read_vocabulary(path) -> Vocabulary:
    """Load a binary vocabulary file.

    Raises:
        CorruptArtifactError: bad magic, truncation or invalid fields.
    """
    r = ByteReader(Path(path).read_bytes(), VOCAB_MAGIC, str(path))
    k = r.u32()
    dim = r.u32()
    scales = r.f64_array(dim)
    centroids = r.f64_array(k * dim).reshape(k, dim)
    seed = r.u64()
    distortion = r.f64()
    r.expect_end()
    stats = KMeansStats(
        iterations=0, final_distortion=distortion, seed=seed,
        distortion_history=(), restarts=0,
    )
    return Vocabulary(centroids, scales, stats)


def export_vocabulary_json(vocabulary: Vocabulary, path) -> None:
    """Human-inspectable JSON mirror of the binary vocabulary file."""
    stats = vocabulary.stats
    payload = {
        "k": vocabulary.k,
        "dim": vocabulary.dim,
        "dim_scales": vocabulary.dim_scales.tolist(),
        "centroids": vocabulary.centroids.tolist(),
        "seed": stats.seed if stats else 0,
        "final_distortion": stats.final_distortion if stats else None,
    }
    atomic_write_bytes(path, (json.dumps(payload, sort_keys=True, indent=1) + "\n").encode("ascii"))
