#!/usr/bin/env python3
"""Desk-scale retrieval experiment: sweep vocabulary sizes on one corpus.

Generates a synthetic labeled corpus, builds retrieval artifacts at each
requested vocabulary size and prints a MAP@k table.  Every stage is
seeded, so reruns with the same arguments reproduce the table exactly.

    python3 scripts/run_desk_experiment.py --workdir /tmp/desk --k 16,32,64
"""

import argparse
import sys
import time
from pathlib import Path

from bovw.evaluation import format_percent
from bovw.pipeline import PipelineConfig, cmd_build, cmd_evaluate
from bovw.synthetic import SyntheticCorpusSpec, generate_corpus


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", type=Path, default=Path("desk_run"),
                        help="corpus and artifacts land here (default: ./desk_run)")
    parser.add_argument("--k", default="16,32,64",
                        help="comma-separated vocabulary sizes (default: 16,32,64)")
    parser.add_argument("--images-per-class", type=int, default=20)
    parser.add_argument("--image-size", type=int, default=128)
    parser.add_argument("--noise", type=float, default=0.02)
    parser.add_argument("--corpus-seed", type=int, default=7)
    parser.add_argument("--k-values", default="3,5,10",
                        help="evaluation cutoffs (default: 3,5,10)")
    args = parser.parse_args(argv)
    args.k = tuple(int(part) for part in args.k.split(",") if part.strip())
    args.k_values = tuple(int(part) for part in args.k_values.split(",") if part.strip())
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    spec = SyntheticCorpusSpec(
        images_per_class=args.images_per_class,
        image_size=args.image_size,
        noise=args.noise,
        seed=args.corpus_seed,
    )
    corpus = args.workdir / "corpus"
    print(f"corpus: {len(spec.classes)} classes x {spec.images_per_class} "
          f"images at {spec.image_size}px (seed {spec.seed}) -> {corpus}")
    generate_corpus(spec, corpus)

    rows = []
    for k in args.k:
        config = PipelineConfig(
            dataset=corpus,
            output=args.workdir / f"artifacts_k{k}",
            k=k,
            k_values=args.k_values,
        )
        start = time.perf_counter()
        result = cmd_build(config)
        report, csv_path, _ = cmd_evaluate(config.output)
        elapsed = time.perf_counter() - start
        rows.append((k, report, elapsed))
        print(f"k={k:<4d} built {result.index.size} histograms, "
              f"{report.n_queries} queries, {elapsed:.1f}s  ({csv_path})")

    header = "k     " + "".join(f"MAP@{k:<6d}" for k in args.k_values) + "seconds"
    print()
    print(header)
    for k, report, elapsed in rows:
        cells = "".join(
            f"{format_percent(report.map_values[kv]) + '%':<10s}"
            for kv in args.k_values
        )
        print(f"{k:<6d}{cells}{elapsed:.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
