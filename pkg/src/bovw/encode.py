"""Histogram encoding: images as visual-word occurrence vectors.

Every image becomes a k-bin histogram counting nearest-centroid
assignments of its descriptors.  The L1-normalized form is what the
classifier and the ranking distance consume; raw counts are kept for
inspection.  Images with no usable descriptors yield the all-zero
degenerate histogram so corpus bookkeeping never drops ids silently.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptArtifactError, EmptyCorpusError
from .fileio import ByteReader, ByteWriter, atomic_write_bytes
from .vocab import FeatureBag, ImageFeatures, Vocabulary, assign_words

INDEX_MAGIC = b"BOVWIDX1"
_UNLABELED = 0xFFFFFFFF


@dataclass(frozen=True, eq=False)
class BovwHistogram:
    """Visual-word histogram of one image.

    ``counts`` is None for histograms loaded from an index file (the
    format stores only the normalized form).  ``n_features == 0`` marks
    a degenerate image; its normalized vector is all zeros.
    """

    image_id: str
    class_label: str | None
    n_features: int
    normalized: np.ndarray
    counts: np.ndarray | None = None

    def __post_init__(self):
        norm = np.ascontiguousarray(self.normalized, dtype=np.float64)
        if norm.ndim != 1 or norm.size == 0:
            raise ValueError("normalized histogram must be a non-empty vector")
        if self.n_features < 0:
            raise ValueError("n_features must be non-negative")
        if self.n_features == 0:
            if norm.any():
                raise ValueError("degenerate histogram must be all zeros")
        elif abs(norm.sum() - 1.0) > 1e-6:
            raise ValueError(f"normalized histogram sums to {norm.sum()}, expected 1")
        if norm.size and norm.min() < 0:
            raise ValueError("normalized histogram has negative bins")
        norm.flags.writeable = False
        object.__setattr__(self, "normalized", norm)
        if self.counts is not None:
            c = np.ascontiguousarray(self.counts, dtype=np.int64)
            if c.shape != norm.shape or (c < 0).any() or int(c.sum()) != self.n_features:
                raise ValueError("counts disagree with n_features")
            c.flags.writeable = False
            object.__setattr__(self, "counts", c)

    @property
    def k(self) -> int:
        return self.normalized.size

    @property
    def degenerate(self) -> bool:
        return self.n_features == 0


def encode_histogram(
    vocabulary: Vocabulary,
    descriptors,
    image_id: str = "",
    class_label: str | None = None,
) -> BovwHistogram:
    """Count nearest-word assignments of ``descriptors``.

    ``descriptors`` may be a (n, dim) array or a list of descriptor
    objects with ``.values``.  An empty list yields the degenerate
    histogram.
    """
    if isinstance(descriptors, np.ndarray):
        mat = descriptors.reshape(-1, vocabulary.dim)
    else:
        mat = np.array([np.asarray(getattr(d, "values", d)) for d in descriptors], dtype=np.float64)
        mat = mat.reshape(-1, vocabulary.dim)
    n = mat.shape[0]
    if n == 0:
        return BovwHistogram(image_id, class_label, 0,
                             np.zeros(vocabulary.k), np.zeros(vocabulary.k, dtype=np.int64))
    words = assign_words(vocabulary, mat)
    counts = np.bincount(words, minlength=vocabulary.k)
    return BovwHistogram(image_id, class_label, n, counts / n, counts)


def encode_features(vocabulary: Vocabulary, features: ImageFeatures) -> BovwHistogram:
    """Histogram of one image's extracted features."""
    return encode_histogram(vocabulary, features.descriptors,
                            features.image_id, features.label)


def encode_corpus(vocabulary: Vocabulary, bag: FeatureBag) -> list[BovwHistogram]:
    """One histogram per image, in image-id order.

    Raises:
        EmptyCorpusError: the bag holds no images.
    """
    if not bag.images:
        raise EmptyCorpusError("cannot encode an empty corpus")
    return [encode_features(vocabulary, f) for f in bag.images]


def idf_weights(histograms) -> np.ndarray:
    """Inverse document frequency per visual word: ln((1 + N) / (1 + df)) + 1.

    Experimental re-weighting for ranking comparisons; the core pipeline
    does not apply it.
    """
    if not histograms:
        raise EmptyCorpusError("idf weights need at least one histogram")
    k = histograms[0].k
    df = np.zeros(k)
    for h in histograms:
        df += (h.normalized > 0)
    return np.log((1.0 + len(histograms)) / (1.0 + df)) + 1.0


# --- index file --------------------------------------------------------------

def write_index(path, histograms, label_table) -> None:
    """Serialize histograms to the binary index format (magic BOVWIDX1).

    ``label_table`` fixes the label-index mapping shared with the model
    file; every labeled histogram's class must appear in it.
    """
    if not histograms:
        raise EmptyCorpusError("refusing to write an empty index")
    k = histograms[0].k
    table = {label: i for i, label in enumerate(label_table)}
    w = ByteWriter(INDEX_MAGIC)
    w.u32(k)
    w.u32(len(histograms))
    for h in histograms:
        if h.k != k:
            raise ValueError(f"histogram {h.image_id!r} has k={h.k}, index has k={k}")
        if h.class_label is None:
            label_idx = _UNLABELED
        elif h.class_label in table:
            label_idx = table[h.class_label]
        else:
            raise ValueError(f"label {h.class_label!r} missing from the label table")
        w.string(h.image_id)
        w.u32(label_idx)
        w.u32(h.n_features)
        w.f32_array(h.normalized)
    atomic_write_bytes(path, w.getvalue())


def read_index(path, label_table) -> list[BovwHistogram]:
    """Load histograms from an index file, resolving labels via ``label_table``.

    Counts are not stored in the format, so loaded histograms carry
    ``counts=None`` and float32-precision normalized vectors.

    Raises:
        CorruptArtifactError: malformed file or unresolvable label index.
    """
    r = ByteReader(Path(path).read_bytes(), INDEX_MAGIC, str(path))
    k = r.u32()
    n_images = r.u32()
    if k == 0:
        raise CorruptArtifactError(f"{path}: k must be positive")
    out = []
    for _ in range(n_images):
        image_id = r.string()
        label_idx = r.u32()
        n_features = r.u32()
        normalized = r.f32_array(k).astype(np.float64)
        if label_idx == _UNLABELED:
            label = None
        elif label_idx < len(label_table):
            label = label_table[label_idx]
        else:
            raise CorruptArtifactError(
                f"{path}: label index {label_idx} outside the {len(label_table)}-entry table"
            )
        try:
            out.append(BovwHistogram(image_id, label, n_features, normalized))
        except ValueError as exc:
            raise CorruptArtifactError(f"{path}: {exc}") from exc
    r.expect_end()
    return out
