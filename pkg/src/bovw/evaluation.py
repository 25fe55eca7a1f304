"""Evaluation protocol: per-class 70:30 split, Precision@k, MAP@k.

MAP here is the arithmetic mean over queries of Precision@k: the
mean-of-precisions definition, not the ranked average-precision of
classical IR.  Reports carry per-query rows so every aggregate can be
recomputed from its own serialization.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import (
    ClassTooSmallError,
    DegenerateQueryError,
    InsufficientResultsError,
    NoQueriesError,
)
from .retrieval import RetrievalIndex, query

CSV_COLUMNS = ("query_id", "class", "k", "relevant_at_k", "precision_at_k")


@dataclass(frozen=True)
class SplitSpec:
    """Per-class train fraction and shuffle seed."""

    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def split_dataset(items, spec: SplitSpec):
    """Split (image_id, label) pairs per class into train and test lists.

    Each class is shuffled by the seeded RNG and cut at
    round(train_fraction * n), half away from zero.  The outcome depends
    only on the item set and the seed, not on input order.

    Raises:
        ClassTooSmallError: a class has fewer than 2 images.
        ValueError: duplicate image ids.
    """
    items = list(items)
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids in the dataset")
    by_class: dict = {}
    for image_id, label in items:
        by_class.setdefault(label, []).append(image_id)
    rng = np.random.default_rng(spec.seed)
    train, test = [], []
    for label in sorted(by_class, key=str):
        members = sorted(by_class[label])
        if len(members) < 2:
            raise ClassTooSmallError(
                f"class {label!r} has {len(members)} image(s); need >= 2 to split"
            )
        order = rng.permutation(len(members))
        n_train = int(math.floor(spec.train_fraction * len(members) + 0.5))
        chosen = [members[i] for i in order]
        train.extend((m, label) for m in chosen[:n_train])
        test.extend((m, label) for m in chosen[n_train:])
    train.sort()
    test.sort()
    return train, test


def precision_at_k(results, query_class, k: int) -> float:
    """Fraction of the first k results whose true class matches the query's.

    Raises:
        InsufficientResultsError: fewer than k results supplied.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(results) < k:
        raise InsufficientResultsError(f"need {k} results, got {len(results)}")
    relevant = sum(1 for r in results[:k] if r.true_label == query_class)
    return relevant / k


def map_at_k(per_query_precisions) -> float:
    """Arithmetic mean of per-query Precision@k values.

    Raises:
        NoQueriesError: empty input.
    """
    values = [float(p) for p in per_query_precisions]
    if not values:
        raise NoQueriesError("MAP over zero queries is undefined")
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class EvalRow:
    """Precision of one query at one cutoff."""

    query_id: str
    class_label: str
    k: int
    relevant_at_k: int
    precision_at_k: float


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-query rows plus the MAP aggregate for each cutoff."""

    rows: tuple[EvalRow, ...]
    map_values: dict
    n_queries: int
    skipped: tuple[str, ...]

    def recompute_map(self) -> dict:
        """MAP values re-derived from the rows (self-consistency check)."""
        per_k: dict = {}
        for row in self.rows:
            per_k.setdefault(row.k, []).append(row.precision_at_k)
        return {k: map_at_k(v) for k, v in per_k.items()}


def run_evaluation(index: RetrievalIndex, test_images, k_values) -> EvalReport:
    """Query every test image in filtered mode and aggregate MAP@k.

    ``test_images`` yields (image_id, class_label, GrayImage) triples.
    Queries are processed in id order with self-exclusion.  Images whose
    extraction is degenerate are recorded in ``skipped``, never silently
    dropped.

    Raises:
        NoQueriesError: no test images, or all were degenerate.
        InsufficientResultsError: some k exceeds the index size after
            exclusion.
    """
    ks = sorted(set(int(k) for k in k_values))
    if not ks or ks[0] < 1:
        raise ValueError(f"k_values must be positive, got {k_values}")
    rows = []
    skipped = []
    n_queries = 0
    for image_id, class_label, image in sorted(test_images, key=lambda t: t[0]):
        try:
            results = query(index, image, k=ks[-1], mode="filtered", exclude_id=image_id)
        except DegenerateQueryError:
            skipped.append(image_id)
            continue
        n_queries += 1
        for k in ks:
            p = precision_at_k(results, class_label, k)
            rows.append(EvalRow(image_id, class_label, k, round(p * k), p))
    if n_queries == 0:
        raise NoQueriesError("every test image was degenerate or the test set was empty")
    per_k = {k: [r.precision_at_k for r in rows if r.k == k] for k in ks}
    return EvalReport(
        rows=tuple(rows),
        map_values={k: map_at_k(v) for k, v in per_k.items()},
        n_queries=n_queries,
        skipped=tuple(skipped),
    )


# --- serialization -----------------------------------------------------------

def report_to_csv(report: EvalReport) -> str:
    """Per-query rows as CSV with the fixed column set."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        writer.writerow([
            row.query_id, row.class_label, row.k,
            row.relevant_at_k, repr(row.precision_at_k),
        ])
    return buf.getvalue()


def report_to_json(report: EvalReport) -> str:
    """Aggregates plus rows; parse with report_from_json to round-trip."""
    payload = {
        "map_at_k": {str(k): report.map_values[k] for k in sorted(report.map_values)},
        "n_queries": report.n_queries,
        "skipped": list(report.skipped),
        "rows": [
            {
                "query_id": r.query_id,
                "class": r.class_label,
                "k": r.k,
                "relevant_at_k": r.relevant_at_k,
                "precision_at_k": r.precision_at_k,
            }
            for r in report.rows
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def report_from_json(text: str) -> EvalReport:
    """Inverse of report_to_json."""
    payload = json.loads(text)
    rows = tuple(
        EvalRow(r["query_id"], r["class"], int(r["k"]),
                int(r["relevant_at_k"]), float(r["precision_at_k"]))
        for r in payload["rows"]
    )
    return EvalReport(
        rows=rows,
        map_values={int(k): float(v) for k, v in payload["map_at_k"].items()},
        n_queries=int(payload["n_queries"]),
        skipped=tuple(payload["skipped"]),
    )


def format_percent(value: float) -> str:
    """Two-decimal percentage with half-up rounding: 2/3 prints as 66.67."""
    return str(Decimal(repr(value * 100.0)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def summary_table(report: EvalReport) -> str:
    """MAP summary shaped like a per-cutoff results table."""
    lines = [f"Queries evaluated: {report.n_queries}"]
    if report.skipped:
        lines.append(f"Skipped (degenerate): {len(report.skipped)}")
    lines.append("k    MAP@k")
    for k in sorted(report.map_values):
        lines.append(f"{k:<4d} {format_percent(report.map_values[k])}%")
    return "\n".join(lines) + "\n"
