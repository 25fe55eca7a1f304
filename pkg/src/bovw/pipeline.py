"""Build, query and evaluate pipelines over on-disk artifact directories.

A build turns a directory-per-class image tree into three binary
artifacts (vocabulary, classifier, index) plus a manifest recording
every seed, parameter, split member and artifact hash.  Later commands
reload artifacts only after the manifest hashes verify, so stale or
hand-edited files fail loudly instead of skewing results.

The manifest holds no timestamps: identical config and dataset must
produce bitwise-identical artifacts, and the manifest itself is part of
that contract.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, fields
from pathlib import Path

from .encode import encode_features, read_index, write_index
from .errors import (
    ArtifactMismatchError,
    BovwError,
    ConfigError,
    CorruptArtifactError,
    DatasetError,
    DimensionMismatchError,
    EmptyCorpusError,
    StageError,
)
from .evaluation import (
    EvalReport,
    SplitSpec,
    report_to_csv,
    report_to_json,
    run_evaluation,
    split_dataset,
)
from .fileio import atomic_write_bytes
from .imgio import integral_image, load_grayscale
from .retrieval import RetrievalIndex, build_index, query, results_to_html
from .surf import DetectorParams, extract_descriptors
from .svm import LinearModel, SvmHyperParams, read_model, train_ovr, write_model
from .synthetic import SyntheticCorpusSpec
from .vocab import (
    FeatureBag,
    Vocabulary,
    build_vocabulary,
    features_from_descriptors,
    prune_strongest,
    read_vocabulary,
    write_vocabulary,
)

VOCAB_FILE = "vocabulary.bovwvoc"
MODEL_FILE = "model.bovwsvm"
INDEX_FILE = "index.bovwidx"
MANIFEST_FILE = "manifest.json"
REPORT_CSV_FILE = "report.csv"
REPORT_JSON_FILE = "report.json"
MANIFEST_VERSION = 1
IMAGE_SUFFIXES = (".pgm", ".png")


def thread_cap() -> int:
    """Upper bound on internal parallelism from BOVW_THREADS (default 1).

    Processing is currently sequential, which satisfies any cap; the
    variable is still validated so typos fail loudly.
    """
    raw = os.environ.get("BOVW_THREADS")
    if raw is None:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"BOVW_THREADS must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"BOVW_THREADS must be >= 1, got {cap}")
    return cap


# --- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    """Resolved build settings; every seed is explicit and recorded."""

    dataset: Path
    output: Path
    k: int = 32
    prune_fraction: float = 0.8
    train_fraction: float = 0.7
    split_seed: int = 0
    kmeans_seed: int = 0
    kmeans_restarts: int = 1
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    octaves: int = 4
    levels_per_octave: int = 4
    hessian_threshold: float = 1e-4
    upright: bool = True
    lam: float = 1e-4
    epochs: int = 50
    svm_seed: int = 42
    labels: Path | None = None
    k_values: tuple[int, ...] = (3, 5, 10)

    def __post_init__(self):
        object.__setattr__(self, "dataset", Path(self.dataset))
        object.__setattr__(self, "output", Path(self.output))
        if self.labels is not None:
            object.__setattr__(self, "labels", Path(self.labels))
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if not 0.0 < self.prune_fraction <= 1.0:
            raise ConfigError(f"prune_fraction must be in (0, 1], got {self.prune_fraction}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.epochs < 1 or self.lam <= 0:
            raise ConfigError("epochs must be >= 1 and lam positive")
        if self.kmeans_restarts < 1 or self.kmeans_max_iter < 1 or self.kmeans_tol < 0:
            raise ConfigError("k-means settings out of range")
        if not self.k_values or min(self.k_values) < 1:
            raise ConfigError(f"k_values must be positive, got {self.k_values}")

    def detector(self) -> DetectorParams:
        return DetectorParams(
            octaves=self.octaves,
            levels_per_octave=self.levels_per_octave,
            hessian_threshold=self.hessian_threshold,
            upright=self.upright,
        )

    def svm_hyper(self) -> SvmHyperParams:
        return SvmHyperParams(lam=self.lam, epochs=self.epochs, seed=self.svm_seed)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    mapping: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in mapping:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        mapping[key] = value.strip("'\"")
    return mapping


def _to_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "yes", "on", "1"):
        return True
    if text in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _to_int_tuple(value):
    if isinstance(value, (tuple, list)):
        return tuple(int(v) for v in value)
    return tuple(int(part) for part in str(value).split(",") if part.strip())


def _to_str_tuple(value):
    if isinstance(value, (tuple, list)):
        return tuple(str(v) for v in value)
    return tuple(part.strip() for part in str(value).split(",") if part.strip())


_BUILD_CASTERS = {
    "dataset": str,
    "output": str,
    "k": int,
    "prune_fraction": float,
    "train_fraction": float,
    "seed": int,
    "split_seed": int,
    "kmeans_seed": int,
    "kmeans_restarts": int,
    "kmeans_max_iter": int,
    "kmeans_tol": float,
    "octaves": int,
    "levels_per_octave": int,
    "hessian_threshold": float,
    "upright": _to_bool,
    "lam": float,
    "epochs": int,
    "svm_seed": int,
    "labels": str,
    "k_values": _to_int_tuple,
}

_CORPUS_CASTERS = {
    "classes": _to_str_tuple,
    "images_per_class": int,
    "image_size": int,
    "noise": float,
    "corpus_seed": int,
}

KNOWN_CONFIG_KEYS = frozenset(_BUILD_CASTERS) | frozenset(_CORPUS_CASTERS)

# A bare `seed` fans out to every stage seed not set explicitly.
_SEED_TARGETS = ("split_seed", "kmeans_seed", "svm_seed")


def _check_keys(mapping: dict) -> None:
    unknown = sorted(set(mapping) - KNOWN_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def _cast(key: str, value, casters):
    try:
        return casters[key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from None


def config_from_mapping(mapping: dict) -> PipelineConfig:
    """Build a PipelineConfig from raw key/value pairs.

    Raises:
        ConfigError: unknown keys, uncastable values or missing
            dataset/output.
    """
    _check_keys(mapping)
    values: dict = {}
    for key, raw in mapping.items():
        if key not in _BUILD_CASTERS:
            continue
        values[key] = _cast(key, raw, _BUILD_CASTERS)
    base_seed = values.pop("seed", None)
    if base_seed is not None:
        for target in _SEED_TARGETS:
            values.setdefault(target, base_seed)
    for required in ("dataset", "output"):
        if required not in values:
            raise ConfigError(f"config is missing the {required!r} key")
    return PipelineConfig(**values)


def corpus_spec_from_mapping(mapping: dict) -> SyntheticCorpusSpec:
    """Synthetic-corpus settings drawn from the same config namespace."""
    _check_keys(mapping)
    values: dict = {}
    for key, raw in mapping.items():
        if key not in _CORPUS_CASTERS:
            continue
        target = "seed" if key == "corpus_seed" else key
        values[target] = _cast(key, raw, _CORPUS_CASTERS)
    try:
        return SyntheticCorpusSpec(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read a key=value config file, apply CLI overrides, validate."""
    mapping = load_config_mapping(path)
    if overrides:
        mapping.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(mapping)


def load_config_mapping(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


# --- dataset discovery -------------------------------------------------------

@dataclass(frozen=True)
class DatasetEntry:
    image_id: str
    label: str
    path: Path


def _read_label_overrides(csv_path: Path) -> dict:
    try:
        text = csv_path.read_text()
    except OSError as exc:
        raise DatasetError(f"cannot read label manifest {csv_path}: {exc}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["path", "label"]:
        raise DatasetError(f"label manifest {csv_path} must start with header 'path,label'")
    overrides: dict = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DatasetError(f"{csv_path}:{lineno}: expected 'path,label', got {row}")
        key = row[0].strip()
        if key in overrides:
            raise DatasetError(f"{csv_path}:{lineno}: duplicate path {key!r}")
        overrides[key] = row[1].strip()
    return overrides


def discover_dataset(root, labels_csv=None) -> list[DatasetEntry]:
    """List images under a directory-per-class tree, sorted by image id.

    Image ids are class-relative POSIX paths ("<class>/<file>").  An
    optional CSV manifest (header ``path,label``) relabels individual
    images without moving files.

    Raises:
        DatasetError: missing root, no images, or a manifest row that
            matches no discovered image.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    entries = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for file in sorted(class_dir.iterdir()):
            if file.is_file() and file.suffix.lower() in IMAGE_SUFFIXES:
                entries.append(DatasetEntry(
                    image_id=f"{class_dir.name}/{file.name}",
                    label=class_dir.name,
                    path=file,
                ))
    if not entries:
        raise DatasetError(
            f"no {'/'.join(IMAGE_SUFFIXES)} images found under {root} "
            "(expected <root>/<class>/<image> layout)"
        )
    if labels_csv is not None:
        overrides = _read_label_overrides(Path(labels_csv))
        known = {e.image_id for e in entries}
        missing = sorted(set(overrides) - known)
        if missing:
            raise DatasetError(f"label manifest rows match no image: {', '.join(missing)}")
        entries = [
            DatasetEntry(e.image_id, overrides.get(e.image_id, e.label), e.path)
            for e in entries
        ]
    return entries


# --- build -------------------------------------------------------------------

@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass(frozen=True)
class BuildResult:
    config: PipelineConfig
    manifest: dict
    vocabulary: Vocabulary
    model: LinearModel
    index: RetrievalIndex
    manifest_path: Path


def _manifest_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()


def cmd_build(config: PipelineConfig) -> BuildResult:
    """Run split, extract, prune, cluster, encode, train and index.

    Writes the three binary artifacts plus ``manifest.json`` into
    ``config.output``.  On any failure the files written by this run
    are removed, and the error is tagged with the failing stage.
    """
    thread_cap()
    created: list[Path] = []
    try:
        with _stage("dataset"):
            entries = discover_dataset(config.dataset, config.labels)
            entry_map = {e.image_id: e for e in entries}
        with _stage("split"):
            train_pairs, test_pairs = split_dataset(
                [(e.image_id, e.label) for e in entries],
                SplitSpec(config.train_fraction, config.split_seed),
            )
        with _stage("extract"):
            detector = config.detector()
            feats = []
            excluded = []
            for image_id, label in train_pairs:
                image = load_grayscale(entry_map[image_id].path)
                descriptors = extract_descriptors(integral_image(image), detector)
                if not descriptors:
                    # Featureless images cannot vote in the vocabulary or
                    # carry a histogram; record them instead of failing.
                    excluded.append(image_id)
                    continue
                feats.append(features_from_descriptors(image_id, label, descriptors))
            if not feats:
                raise EmptyCorpusError("every training image was featureless")
        with _stage("prune"):
            pruned = prune_strongest(FeatureBag(tuple(feats)), config.prune_fraction)
        with _stage("vocabulary"):
            # The bag is already pruned; fraction 1.0 keeps the pool as is.
            vocabulary = build_vocabulary(
                pruned, config.k, config.kmeans_seed,
                prune_fraction=1.0,
                max_iter=config.kmeans_max_iter,
                tol=config.kmeans_tol,
                n_restarts=config.kmeans_restarts,
            )
        with _stage("encode"):
            histograms = [encode_features(vocabulary, f) for f in pruned.images]
        with _stage("train"):
            model = train_ovr(histograms, config.svm_hyper())
        with _stage("index"):
            index = build_index(histograms, model, vocabulary,
                                detector, config.prune_fraction)
        with _stage("write"):
            out = config.output
            out.mkdir(parents=True, exist_ok=True)
            vocab_path = out / VOCAB_FILE
            model_path = out / MODEL_FILE
            index_path = out / INDEX_FILE
            write_vocabulary(vocabulary, vocab_path)
            created.append(vocab_path)
            write_model(model, model_path)
            created.append(model_path)
            write_index(index_path, histograms, model.labels)
            created.append(index_path)
        with _stage("manifest"):
            per_class: dict = {}
            for e in entries:
                per_class[e.label] = per_class.get(e.label, 0) + 1
            manifest = {
                "format_version": MANIFEST_VERSION,
                "dataset": str(config.dataset),
                "labels_csv": str(config.labels) if config.labels else None,
                "parameters": {
                    f.name: getattr(config, f.name)
                    for f in fields(config)
                    if f.name not in ("dataset", "output", "labels")
                },
                "per_class_counts": per_class,
                "split": {
                    "train": [[i, lab] for i, lab in train_pairs],
                    "test": [[i, lab] for i, lab in test_pairs],
                },
                "excluded_degenerate": excluded,
                "artifacts": {
                    VOCAB_FILE: _sha256(vocab_path),
                    MODEL_FILE: _sha256(model_path),
                    INDEX_FILE: _sha256(index_path),
                },
            }
            manifest_path = out / MANIFEST_FILE
            atomic_write_bytes(manifest_path, _manifest_bytes(manifest))
            created.append(manifest_path)
    except BaseException:
        for path in reversed(created):
            path.unlink(missing_ok=True)
        raise
    return BuildResult(config, manifest, vocabulary, model, index, manifest_path)


# --- artifact loading --------------------------------------------------------

@dataclass(frozen=True)
class LoadedArtifacts:
    manifest: dict
    vocabulary: Vocabulary
    model: LinearModel
    index: RetrievalIndex
    dataset_root: Path


def load_artifacts(artifact_dir) -> LoadedArtifacts:
    """Reload a build after verifying every artifact hash in the manifest.

    Raises:
        CorruptArtifactError: missing or unparsable manifest, or a
            malformed artifact file.
        ArtifactMismatchError: a hash disagrees with the manifest, or
            the artifacts disagree with each other.
    """
    root = Path(artifact_dir)
    manifest_path = root / MANIFEST_FILE
    if not manifest_path.is_file():
        raise CorruptArtifactError(f"no {MANIFEST_FILE} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptArtifactError(f"cannot parse {manifest_path}: {exc}") from None
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise CorruptArtifactError(
            f"{manifest_path}: unsupported format_version {manifest.get('format_version')!r}"
        )
    for name, recorded in sorted(manifest.get("artifacts", {}).items()):
        path = root / name
        if not path.is_file():
            raise ArtifactMismatchError(f"artifact {name} listed in manifest is missing")
        actual = _sha256(path)
        if actual != recorded:
            raise ArtifactMismatchError(
                f"artifact {name} hash {actual[:12]}... does not match manifest "
                f"{recorded[:12]}... (rebuild or restore the file)"
            )
    vocabulary = read_vocabulary(root / VOCAB_FILE)
    model = read_model(root / MODEL_FILE)
    histograms = read_index(root / INDEX_FILE, model.labels)
    params = manifest.get("parameters", {})
    detector = DetectorParams(
        octaves=int(params.get("octaves", 4)),
        levels_per_octave=int(params.get("levels_per_octave", 4)),
        hessian_threshold=float(params.get("hessian_threshold", 1e-4)),
        upright=bool(params.get("upright", True)),
    )
    try:
        index = build_index(histograms, model, vocabulary, detector,
                            float(params.get("prune_fraction", 0.8)))
    except DimensionMismatchError as exc:
        raise ArtifactMismatchError(f"artifacts disagree: {exc}") from None
    return LoadedArtifacts(
        manifest=manifest,
        vocabulary=vocabulary,
        model=model,
        index=index,
        dataset_root=Path(manifest.get("dataset", ".")),
    )


# --- query and evaluate ------------------------------------------------------

def cmd_query(
    artifact_dir,
    image_path,
    k: int = 10,
    mode: str = "filtered",
    exclude_id: str | None = None,
    metric: str = "euclidean",
    html_path=None,
):
    """Load artifacts, encode the query image and rank the corpus.

    Returns (results, warnings); a k beyond the index size truncates
    with a warning rather than failing.  ``html_path`` additionally
    writes a contact sheet whose thumbnails resolve against the dataset
    path recorded in the manifest.
    """
    thread_cap()
    arts = load_artifacts(artifact_dir)
    image = load_grayscale(image_path)
    available = arts.index.size
    if exclude_id is not None and exclude_id in arts.index.image_ids:
        available -= 1
    warnings = []
    if k > available:
        warnings.append(
            f"k={k} exceeds the {available} indexed image(s); truncating"
        )
    results = query(arts.index, image, k, mode=mode,
                    exclude_id=exclude_id, metric=metric)
    if html_path is not None:
        paths = {r.image_id: str(arts.dataset_root / r.image_id) for r in results}
        page = results_to_html(results, paths, query_path=str(image_path))
        atomic_write_bytes(html_path, page.encode())
    return results, warnings


def cmd_evaluate(
    artifact_dir,
    k_values=None,
    output_dir=None,
) -> tuple[EvalReport, Path, Path]:
    """Evaluate the manifest's test split; write CSV and JSON reports.

    Test images load from the dataset path recorded at build time.
    Returns the report plus the two file paths.
    """
    thread_cap()
    arts = load_artifacts(artifact_dir)
    ks = tuple(k_values) if k_values else tuple(
        int(k) for k in arts.manifest.get("parameters", {}).get("k_values", (3, 5, 10))
    )
    test_pairs = arts.manifest.get("split", {}).get("test", [])
    triples = []
    for image_id, label in test_pairs:
        path = arts.dataset_root / image_id
        if not path.is_file():
            raise DatasetError(
                f"test image {image_id} missing under {arts.dataset_root} "
                "(dataset moved since the build?)"
            )
        triples.append((image_id, label, load_grayscale(path)))
    report = run_evaluation(arts.index, triples, ks)
    out = Path(output_dir) if output_dir is not None else Path(artifact_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / REPORT_CSV_FILE
    json_path = out / REPORT_JSON_FILE
    atomic_write_bytes(csv_path, report_to_csv(report).encode())
    atomic_write_bytes(json_path, report_to_json(report).encode())
    return report, csv_path, json_path
