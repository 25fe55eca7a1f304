"""One-vs-rest linear SVMs over visual-word histograms.

Each class gets a binary hinge-loss problem, lambda/2 ||w||^2 + mean
hinge, minimized by seeded stochastic subgradient descent with the
1/(lambda t) step schedule.  The bias is unregularized.  Training is
deterministic given (data, hyperparameters): examples are visited in a
per-class seeded shuffle, and per-class RNG streams are derived from
(seed, class index) so class problems stay independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    NonFiniteLossError,
    SingleClassError,
)
from .fileio import U64_MAX, ByteReader, ByteWriter, atomic_write_bytes

MODEL_MAGIC = b"BOVWSVM1"


@dataclass(frozen=True)
class SvmHyperParams:
    """Regularization, epoch budget and shuffle seed."""

    lam: float = 1e-4
    epochs: int = 50
    seed: int = 42

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.seed <= U64_MAX:
            raise ValueError("seed must fit in u64 (artifact format)")


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Per-class weight vectors and biases, labels in sorted order.

    ``objective_history`` holds each class problem's per-epoch training
    objective; it is diagnostic only and not serialized.
    """

    labels: tuple[str, ...]
    weights: np.ndarray
    biases: np.ndarray
    hyper: SvmHyperParams
    objective_history: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        b = np.ascontiguousarray(self.biases, dtype=np.float64)
        labels = tuple(self.labels)
        if len(labels) < 2:
            raise SingleClassError("a model needs at least 2 classes")
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate class labels")
        if w.ndim != 2 or w.shape[0] != len(labels) or b.shape != (len(labels),):
            raise ValueError("weights/biases shape disagrees with the label count")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NonFiniteLossError("model parameters are non-finite")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True, eq=False)
class Prediction:
    """Decision scores per class and the argmax label."""

    label_index: int
    label: str
    scores: np.ndarray


def hinge_objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    """Regularized hinge objective: lam/2 ||w||^2 + mean max(0, 1 - y f(x))."""
    # overflow is tolerated here: the caller checks finiteness and reports
    # divergence instead of crashing mid-epoch
    with np.errstate(over="ignore", invalid="ignore"):
        margins = y * (x @ w + b)
        return 0.5 * lam * float(w @ w) + float(np.maximum(0.0, 1.0 - margins).mean())


def hinge_subgradient(w, b, x, y, lam):
    """Subgradient of the objective at (w, b); 0 is chosen at hinge kinks."""
    margins = y * (x @ w + b)
    active = margins < 1.0
    n = x.shape[0]
    gw = lam * w - (y[active, None] * x[active]).sum(axis=0) / n
    gb = -float(y[active].sum()) / n
    return gw, gb


def _train_binary(x: np.ndarray, y: np.ndarray, hyper: SvmHyperParams, rng) -> tuple:
    n, dim = x.shape
    w = np.zeros(dim)
    b = 0.0
    t = 0
    history = []
    for _ in range(hyper.epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            for i in rng.permutation(n):
                t += 1
                eta = 1.0 / (hyper.lam * t)
                w *= 1.0 - eta * hyper.lam
                if y[i] * (x[i] @ w + b) < 1.0:
                    w += eta * y[i] * x[i]
                    b += eta * y[i]
        obj = hinge_objective(w, b, x, y, hyper.lam)
        if not np.isfinite(obj):
            raise NonFiniteLossError(f"training objective diverged at epoch {len(history) + 1}")
        history.append(obj)
    return w, b, tuple(history)


def train_ovr_on_features(features: np.ndarray, labels, hyper: SvmHyperParams | None = None) -> LinearModel:
    """One-vs-rest training on a raw (n, dim) feature matrix.

    The class list is the sorted set of ``labels``; each class problem
    runs on its own RNG stream derived from (seed, class index).

    Raises:
        SingleClassError: fewer than 2 classes present.
        NonFiniteLossError: the objective diverged.
    """
    if hyper is None:
        hyper = SvmHyperParams()
    x = np.ascontiguousarray(features, dtype=np.float64)
    labels = list(labels)
    if x.ndim != 2 or x.shape[0] != len(labels) or not labels:
        raise ValueError("features must be (n, dim) with one label per row")
    if not np.isfinite(x).all():
        raise NonFiniteLossError("training features contain non-finite values")
    class_names = tuple(sorted(set(labels)))
    if len(class_names) < 2:
        raise SingleClassError(f"training set covers only {class_names}")
    targets = np.array([class_names.index(lb) for lb in labels])

    weights = np.zeros((len(class_names), x.shape[1]))
    biases = np.zeros(len(class_names))
    histories = []
    for ci in range(len(class_names)):
        y = np.where(targets == ci, 1.0, -1.0)
        rng = np.random.default_rng([hyper.seed, ci])
        weights[ci], biases[ci], hist = _train_binary(x, y, hyper, rng)
        histories.append(hist)
    return LinearModel(class_names, weights, biases, hyper, tuple(histories))


def train_ovr(histograms, hyper: SvmHyperParams | None = None) -> LinearModel:
    """Train one-vs-rest classifiers on labeled, non-degenerate histograms.

    Input order does not matter: examples are sorted by image id before
    the seeded shuffles, so any permutation of ``histograms`` yields a
    bitwise-identical model.

    Raises:
        SingleClassError: fewer than 2 classes present.
        DegenerateInputError: a degenerate (all-zero) histogram slipped in.
        ValueError: an unlabeled histogram in the training set.
    """
    hs = sorted(histograms, key=lambda h: h.image_id)
    if not hs:
        raise SingleClassError("empty training set")
    for h in hs:
        if h.class_label is None:
            raise ValueError(f"unlabeled histogram {h.image_id!r} in the training set")
        if h.degenerate:
            raise DegenerateInputError(
                f"degenerate histogram {h.image_id!r} cannot train the classifier"
            )
    x = np.vstack([h.normalized for h in hs])
    return train_ovr_on_features(x, [h.class_label for h in hs], hyper)


def decision_scores(model: LinearModel, features: np.ndarray) -> np.ndarray:
    """Rows of w_c . x + b_c for one vector or a batch."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.dim:
        raise DimensionMismatchError(
            f"features have {x.shape[1]} dimensions, model expects {model.dim}"
        )
    scores = x @ model.weights.T + model.biases
    return scores[0] if single else scores


def predict(model: LinearModel, histogram) -> Prediction:
    """Argmax-of-scores prediction, lowest class index on ties."""
    features = getattr(histogram, "normalized", histogram)
    scores = decision_scores(model, np.asarray(features, dtype=np.float64))
    idx = int(np.argmax(scores))
    return Prediction(idx, model.labels[idx], scores)


def predict_labels(model: LinearModel, features: np.ndarray) -> list[str]:
    """Batch argmax labels for an (n, dim) feature matrix."""
    scores = np.atleast_2d(decision_scores(model, features))
    return [model.labels[i] for i in np.argmax(scores, axis=1)]


# --- artifact format ---------------------------------------------------------

def write_model(model: LinearModel, path) -> None:
    """Serialize to the binary model format (magic BOVWSVM1)."""
    w = ByteWriter(MODEL_MAGIC)
    w.u32(model.n_classes)
    w.u32(model.dim)
    for label in model.labels:
        w.string(label)
    w.f64_array(model.biases)
    w.f64_array(model.weights)
    w.f64(model.hyper.lam)
    w.u32(model.hyper.epochs)
    w.u64(model.hyper.seed)
    atomic_write_bytes(path, w.getvalue())


def read_model(path) -> LinearModel:
    """Load a binary model file.

    Raises:
        CorruptArtifactError: malformed payload.
    """
    r = ByteReader(Path(path).read_bytes(), MODEL_MAGIC, str(path))
    n_classes = r.u32()
    dim = r.u32()
    labels = tuple(r.string() for _ in range(n_classes))
    biases = r.f64_array(n_classes)
    weights = r.f64_array(n_classes * dim).reshape(n_classes, dim)
    hyper = SvmHyperParams(lam=r.f64(), epochs=r.u32(), seed=r.u64())
    r.expect_end()
    return LinearModel(labels, weights, biases, hyper)
