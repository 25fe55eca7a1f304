"""The ``bovw`` command: gen-corpus, build, query and evaluate.

Success output goes to stdout (JSON lines for query, a summary table
for evaluate).  Every failure writes one machine-readable JSON object
to stderr and maps to a stable exit code: 2 usage, 3 data error,
4 artifact mismatch, 5 degenerate query.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import BovwError, StageError, UsageError
from .evaluation import summary_table
from .pipeline import (
    cmd_build,
    cmd_evaluate,
    cmd_query,
    config_from_mapping,
    corpus_spec_from_mapping,
    load_config_mapping,
)
from .retrieval import METRICS, MODES, results_to_jsonl
from .synthetic import generate_corpus


class _Parser(argparse.ArgumentParser):
    # Argument errors must leave as JSON on stderr with exit code 2.
    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="bovw",
        description="Bag-of-visual-words image retrieval over on-disk artifacts.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-corpus",
                         help="write a deterministic synthetic image corpus")
    gen.add_argument("--config", help="key=value config file")
    gen.add_argument("--output", help="corpus root (defaults to the dataset config key)")
    gen.add_argument("--seed", type=int, help="corpus seed")
    gen.add_argument("--classes", help="comma-separated generator kinds")
    gen.add_argument("--images-per-class", type=int)
    gen.add_argument("--image-size", type=int)
    gen.add_argument("--noise", type=float)
    gen.set_defaults(func=_run_gen_corpus)

    build = sub.add_parser("build",
                           help="train vocabulary, classifier and index")
    build.add_argument("--config", help="key=value config file")
    build.add_argument("--dataset", help="directory-per-class image tree")
    build.add_argument("--output", help="artifact directory")
    build.add_argument("--k", type=int, help="vocabulary size")
    build.add_argument("--seed", type=int,
                       help="sets split, k-means and SVM seeds together")
    build.set_defaults(func=_run_build)

    q = sub.add_parser("query",
                       help="rank indexed images against a query image")
    q.add_argument("image", help="query image path (PGM or PNG)")
    q.add_argument("--artifacts", help="artifact directory from a build")
    q.add_argument("--config", help="config file whose output key locates artifacts")
    q.add_argument("--k", type=int, default=10)
    q.add_argument("--mode", choices=MODES, default="filtered")
    q.add_argument("--metric", choices=METRICS, default="euclidean")
    q.add_argument("--exclude-id", help="image id to drop from the candidates")
    q.add_argument("--output", help="write JSON lines here instead of stdout")
    q.add_argument("--html", help="also write an HTML contact sheet")
    q.set_defaults(func=_run_query)

    ev = sub.add_parser("evaluate",
                        help="score the held-out split and write reports")
    ev.add_argument("--artifacts", help="artifact directory from a build")
    ev.add_argument("--config", help="config file whose output key locates artifacts")
    ev.add_argument("--k-values", help="comma-separated cutoffs, default 3,5,10")
    ev.add_argument("--output", help="report directory (defaults to the artifact dir)")
    ev.set_defaults(func=_run_evaluate)
    return parser


def _artifact_dir(args) -> str:
    if args.artifacts:
        return args.artifacts
    if args.config:
        mapping = load_config_mapping(args.config)
        if "output" in mapping:
            return mapping["output"]
        raise UsageError(f"config {args.config} has no output key")
    raise UsageError("need --artifacts or --config to locate build artifacts")


def _run_gen_corpus(args) -> int:
    mapping = load_config_mapping(args.config) if args.config else {}
    for key, value in (
        ("classes", args.classes),
        ("images_per_class", args.images_per_class),
        ("image_size", args.image_size),
        ("noise", args.noise),
        ("corpus_seed", args.seed),
    ):
        if value is not None:
            mapping[key] = value
    spec = corpus_spec_from_mapping(mapping)
    root = args.output or mapping.get("dataset")
    if not root:
        raise UsageError("gen-corpus needs --output or a dataset config key")
    records = generate_corpus(spec, root)
    print(json.dumps({
        "root": str(root),
        "classes": list(spec.classes),
        "images_per_class": spec.images_per_class,
        "images": len(records),
    }))
    return 0


def _run_build(args) -> int:
    overrides = {
        "dataset": args.dataset,
        "output": args.output,
        "k": args.k,
        "seed": args.seed,
    }
    mapping = load_config_mapping(args.config) if args.config else {}
    mapping.update({k: v for k, v in overrides.items() if v is not None})
    config = config_from_mapping(mapping)
    result = cmd_build(config)
    manifest = result.manifest
    print(json.dumps({
        "manifest": str(result.manifest_path),
        "artifacts": manifest["artifacts"],
        "classes": sorted(manifest["per_class_counts"]),
        "train_images": len(manifest["split"]["train"]),
        "test_images": len(manifest["split"]["test"]),
        "excluded_degenerate": manifest["excluded_degenerate"],
    }))
    return 0


def _run_query(args) -> int:
    artifact_dir = _artifact_dir(args)
    results, warnings = cmd_query(
        artifact_dir,
        args.image,
        k=args.k,
        mode=args.mode,
        exclude_id=args.exclude_id,
        metric=args.metric,
        html_path=args.html,
    )
    for warning in warnings:
        print(json.dumps({"warning": warning}), file=sys.stderr)
    text = results_to_jsonl(results)
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text, end="")
    return 0


def _run_evaluate(args) -> int:
    artifact_dir = _artifact_dir(args)
    k_values = None
    if args.k_values:
        try:
            k_values = tuple(int(part) for part in args.k_values.split(",") if part.strip())
        except ValueError:
            raise UsageError(f"--k-values must be comma-separated integers, got {args.k_values!r}")
        if not k_values:
            raise UsageError("--k-values is empty")
    report, csv_path, json_path = cmd_evaluate(artifact_dir, k_values, args.output)
    print(summary_table(report))
    print(f"reports: {csv_path} {json_path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already reported (JSON for errors, plain text for -h).
        return int(exc.code or 0)
    try:
        return args.func(args)
    except StageError as exc:
        print(json.dumps({
            "error": type(exc.cause).__name__,
            "stage": exc.stage,
            "message": str(exc),
        }), file=sys.stderr)
        return exc.exit_code
    except BovwError as exc:
        print(json.dumps({
            "error": type(exc).__name__,
            "message": str(exc),
        }), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "IoError", "message": str(exc)}), file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
