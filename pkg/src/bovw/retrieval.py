"""Similarity search over encoded corpora, steered by the classifier.

The default "filtered" mode mirrors classifier-assisted retrieval:
images sharing the query's predicted class rank first (by histogram
distance), and only if fewer than k exist does the list fill up from
the remaining classes.  "global" mode is the plain distance baseline.
All ranking is an exact linear scan; corpora here are small enough
that approximate search would only add moving parts.
"""

from __future__ import annotations

import html
import json
from dataclasses import dataclass

import numpy as np

from .encode import encode_features
from .errors import (
    DegenerateQueryError,
    DimensionMismatchError,
    EmptyCorpusError,
    EmptyIndexError,
)
from .imgio import GrayImage, integral_image
from .surf import DetectorParams, extract_descriptors
from .svm import LinearModel, predict, predict_labels
from .vocab import FeatureBag, Vocabulary, features_from_descriptors, prune_strongest

MODES = ("filtered", "global")
METRICS = ("euclidean", "cosine")


@dataclass(frozen=True, eq=False)
class RankedResult:
    """One retrieved image; ``true_label`` feeds the evaluation metrics."""

    rank: int
    image_id: str
    distance: float
    predicted_label: str | None
    true_label: str | None


@dataclass(frozen=True, eq=False)
class RetrievalIndex:
    """Immutable search structure over the encoded corpus.

    ``features`` holds the L1-normalized histograms row-aligned with
    ``image_ids``; ``predicted_labels`` caches the classifier output
    used by filtered mode.  The detector settings and prune fraction
    travel along so queries run the same pipeline the corpus saw.
    """

    vocabulary: Vocabulary
    model: LinearModel
    image_ids: tuple[str, ...]
    features: np.ndarray
    labels: tuple
    predicted_labels: tuple[str, ...]
    detector: DetectorParams
    prune_fraction: float

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float64)
        n = len(self.image_ids)
        if f.shape != (n, self.vocabulary.k):
            raise DimensionMismatchError(
                f"feature matrix {f.shape} disagrees with {n} ids x k={self.vocabulary.k}"
            )
        if len(self.labels) != n or len(self.predicted_labels) != n:
            raise ValueError("labels must align with image ids")
        if len(set(self.image_ids)) != n:
            raise ValueError("image ids must be unique")
        f.flags.writeable = False
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "image_ids", tuple(self.image_ids))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "predicted_labels", tuple(self.predicted_labels))

    @property
    def size(self) -> int:
        return len(self.image_ids)


def build_index(
    histograms,
    model: LinearModel,
    vocabulary: Vocabulary,
    detector: DetectorParams | None = None,
    prune_fraction: float = 0.8,
) -> RetrievalIndex:
    """Index a corpus of histograms with cached classifier predictions.

    Raises:
        EmptyCorpusError: no histograms.
        DimensionMismatchError: model or histogram k disagrees with the
            vocabulary.
    """
    hs = sorted(histograms, key=lambda h: h.image_id)
    if not hs:
        raise EmptyCorpusError("cannot index an empty corpus")
    if model.dim != vocabulary.k:
        raise DimensionMismatchError(
            f"model expects {model.dim}-dim features, vocabulary has k={vocabulary.k}"
        )
    for h in hs:
        if h.k != vocabulary.k:
            raise DimensionMismatchError(
                f"histogram {h.image_id!r} has k={h.k}, vocabulary has k={vocabulary.k}"
            )
    features = np.vstack([h.normalized for h in hs])
    return RetrievalIndex(
        vocabulary=vocabulary,
        model=model,
        image_ids=tuple(h.image_id for h in hs),
        features=features,
        labels=tuple(h.class_label for h in hs),
        predicted_labels=tuple(predict_labels(model, features)),
        detector=detector if detector is not None else DetectorParams(),
        prune_fraction=prune_fraction,
    )


def _distances(index: RetrievalIndex, q: np.ndarray, metric: str, weights) -> np.ndarray:
    feats = index.features
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (feats.shape[1],):
            raise ValueError("weights must have one entry per visual word")
        feats = feats * w
        q = q * w
    if metric == "euclidean":
        return np.sqrt(((feats - q) ** 2).sum(axis=1))
    if metric == "cosine":
        norms = np.linalg.norm(feats, axis=1)
        qn = np.linalg.norm(q)
        sims = np.zeros(len(feats))
        ok = norms > 0
        if qn > 0:
            sims[ok] = (feats[ok] @ q) / (norms[ok] * qn)
        return 1.0 - sims
    raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")


def query_by_histogram(
    index: RetrievalIndex,
    histogram,
    k: int,
    mode: str = "filtered",
    exclude_id: str | None = None,
    metric: str = "euclidean",
    weights=None,
) -> list[RankedResult]:
    """Rank indexed images against an already-encoded query.

    Returns min(k, available) results with consecutive ranks from 1.
    Distance ties break by image id ascending.

    Raises:
        DegenerateQueryError: the query histogram carries no mass.
        EmptyIndexError: nothing to rank after exclusion.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    q = np.asarray(getattr(histogram, "normalized", histogram), dtype=np.float64)
    if q.shape != (index.vocabulary.k,):
        raise DimensionMismatchError(
            f"query histogram has shape {q.shape}, index expects ({index.vocabulary.k},)"
        )
    if not q.any():
        raise DegenerateQueryError("query histogram is all zeros")

    keep = [i for i in range(index.size) if index.image_ids[i] != exclude_id]
    if not keep:
        raise EmptyIndexError("no indexed images left to rank")
    dists = _distances(index, q, metric, weights)

    def by_distance(rows):
        return sorted(rows, key=lambda i: (dists[i], index.image_ids[i]))

    if mode == "global":
        ordered = by_distance(keep)
    else:
        query_label = predict(index.model, q).label
        same = [i for i in keep if index.predicted_labels[i] == query_label]
        rest = [i for i in keep if index.predicted_labels[i] != query_label]
        ordered = by_distance(same) + by_distance(rest)

    out = []
    for rank, i in enumerate(ordered[:k], start=1):
        out.append(RankedResult(
            rank=rank,
            image_id=index.image_ids[i],
            distance=float(dists[i]),
            predicted_label=index.predicted_labels[i],
            true_label=index.labels[i],
        ))
    return out


def encode_query_image(index: RetrievalIndex, image: GrayImage, image_id: str = "<query>"):
    """Run the exact corpus pipeline (detect, prune, encode) on one image.

    Raises:
        DegenerateQueryError: no usable descriptors were extracted.
    """
    descriptors = extract_descriptors(integral_image(image), index.detector)
    if not descriptors:
        raise DegenerateQueryError(f"{image_id}: no usable descriptors extracted")
    features = features_from_descriptors(image_id, None, descriptors)
    bag = prune_strongest(FeatureBag((features,)), index.prune_fraction)
    return encode_features(index.vocabulary, bag.images[0])


def query(
    index: RetrievalIndex,
    image: GrayImage,
    k: int,
    mode: str = "filtered",
    exclude_id: str | None = None,
    metric: str = "euclidean",
    weights=None,
) -> list[RankedResult]:
    """Full-pipeline query: extract, prune, encode, then rank."""
    histogram = encode_query_image(index, image)
    return query_by_histogram(index, histogram, k, mode=mode,
                              exclude_id=exclude_id, metric=metric, weights=weights)


def results_to_jsonl(results) -> str:
    """One JSON object per line: rank, image_id, distance, predicted_label."""
    lines = [
        json.dumps({
            "rank": r.rank,
            "image_id": r.image_id,
            "distance": r.distance,
            "predicted_label": r.predicted_label,
        })
        for r in results
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def results_to_html(results, image_paths, query_path=None) -> str:
    """Static contact sheet; ``image_paths`` maps image id to a file path."""
    cells = []
    if query_path is not None:
        cells.append(
            f'<figure><img src="{html.escape(str(query_path))}" alt="query">'
            f"<figcaption>query</figcaption></figure>"
        )
    for r in results:
        src = html.escape(str(image_paths.get(r.image_id, "")))
        caption = html.escape(
            f"#{r.rank} {r.image_id} d={r.distance:.4f} [{r.predicted_label}]"
        )
        cells.append(f'<figure><img src="{src}" alt="{html.escape(r.image_id)}">'
                     f"<figcaption>{caption}</figcaption></figure>")
    body = "\n".join(cells)
    return (
        "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>retrieval results</title>"
        "<style>figure{display:inline-block;margin:4px;text-align:center;font:12px sans-serif}"
        "img{max-width:160px;border:1px solid #999}</style></head>\n"
        f"<body>\n{body}\n</body></html>\n"
    )
