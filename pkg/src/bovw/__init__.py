"""Bag-of-visual-words image retrieval.

Box-filter interest points over integral images, a k-means visual
vocabulary under standardized Euclidean distance, one-vs-rest linear
SVMs trained by stochastic subgradient descent, and classifier-assisted
ranking with Precision@k / MAP@k evaluation.  The ``bovw`` console
script drives the same pipeline over on-disk artifacts.
"""

from .encode import BovwHistogram, encode_corpus, encode_features, encode_histogram
from .evaluation import (
    EvalReport,
    SplitSpec,
    map_at_k,
    precision_at_k,
    run_evaluation,
    split_dataset,
)
from .imgio import GrayImage, IntegralImage, integral_image, load_grayscale, save_pgm
from .pipeline import (
    PipelineConfig,
    cmd_build,
    cmd_evaluate,
    cmd_query,
    load_artifacts,
)
from .retrieval import RankedResult, RetrievalIndex, build_index, query, query_by_histogram
from .surf import (
    DetectorParams,
    Descriptor,
    InterestPoint,
    compute_descriptor,
    detect_interest_points,
    extract_descriptors,
)
from .svm import LinearModel, SvmHyperParams, predict, train_ovr
from .synthetic import SyntheticCorpusSpec, generate_corpus
from .vocab import FeatureBag, ImageFeatures, Vocabulary, build_vocabulary, kmeans

__version__ = "0.1.0"

__all__ = [
    "BovwHistogram",
    "Descriptor",
    "DetectorParams",
    "EvalReport",
    "FeatureBag",
    "GrayImage",
    "ImageFeatures",
    "IntegralImage",
    "InterestPoint",
    "LinearModel",
    "PipelineConfig",
    "RankedResult",
    "RetrievalIndex",
    "SplitSpec",
    "SvmHyperParams",
    "SyntheticCorpusSpec",
    "Vocabulary",
    "build_index",
    "build_vocabulary",
    "cmd_build",
    "cmd_evaluate",
    "cmd_query",
    "compute_descriptor",
    "detect_interest_points",
    "encode_corpus",
    "encode_features",
    "encode_histogram",
    "extract_descriptors",
    "generate_corpus",
    "integral_image",
    "kmeans",
    "load_artifacts",
    "load_grayscale",
    "map_at_k",
    "precision_at_k",
    "predict",
    "query",
    "query_by_histogram",
    "run_evaluation",
    "save_pgm",
    "split_dataset",
    "train_ovr",
    "__version__",
]
