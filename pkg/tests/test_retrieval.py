"""Ranking tests built on hand-made vocabularies and classifiers.

The oracle for correctness is an exhaustive fsum distance sort; the
hand-built linear models make the classifier's filtered-mode verdicts
fully predictable.
"""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bovw.encode import BovwHistogram
from bovw.errors import (
    DegenerateQueryError,
    DimensionMismatchError,
    EmptyCorpusError,
    EmptyIndexError,
)
from bovw.imgio import GrayImage, integral_image
from bovw.retrieval import (
    build_index,
    query,
    query_by_histogram,
    results_to_html,
    results_to_jsonl,
)
from bovw.surf import extract_descriptors
from bovw.svm import LinearModel, SvmHyperParams, predict
from bovw.synthetic import corpus_image, SyntheticCorpusSpec
from bovw.vocab import (
    FeatureBag,
    Vocabulary,
    build_vocabulary,
    features_from_descriptors,
    prune_strongest,
)
from bovw.encode import encode_features


def toy_vocabulary(k):
    # Only vocabulary.k matters to the index; descriptor dim is free.
    centroids = np.arange(k * 2, dtype=float).reshape(k, 2)
    return Vocabulary(centroids=centroids, dim_scales=np.ones(2), stats=None)


def toy_model(k):
    """Two classes: 'a' wins when bin 0 beats bin 1, ties go to 'a'."""
    weights = np.zeros((2, k))
    weights[0, 0] = 1.0
    weights[1, 1] = 1.0
    return LinearModel(
        labels=("a", "b"),
        weights=weights,
        biases=np.zeros(2),
        hyper=SvmHyperParams(),
    )


def hist(image_id, values, label=None):
    v = np.asarray(values, dtype=float)
    return BovwHistogram(
        image_id=image_id,
        class_label=label,
        n_features=10,
        normalized=v / v.sum(),
    )


def toy_index(rows):
    """rows: (image_id, raw bin values, true label)."""
    k = len(rows[0][1])
    hs = [hist(i, v, lab) for i, v, lab in rows]
    return build_index(hs, toy_model(k), toy_vocabulary(k))


BASIC_ROWS = [
    ("q0", [6, 2, 2], "a"),
    ("q1", [5, 3, 2], "a"),
    ("q2", [2, 6, 2], "b"),
    ("q3", [1, 7, 2], "b"),
    ("q4", [4, 4, 2], "a"),
]


class TestBuildIndex:
    def test_ids_sorted_regardless_of_input_order(self):
        index = toy_index(list(reversed(BASIC_ROWS)))
        assert index.image_ids == ("q0", "q1", "q2", "q3", "q4")
        assert index.size == 5

    def test_cached_predictions_match_per_row_predict(self):
        index = toy_index(BASIC_ROWS)
        for i in range(index.size):
            assert index.predicted_labels[i] == predict(index.model, index.features[i]).label

    def test_tie_prediction_goes_to_first_label(self):
        index = toy_index([("t0", [4, 4, 2], "a"), ("t1", [1, 1, 8], "b")])
        assert index.predicted_labels == ("a", "a")

    def test_empty_corpus_rejected(self):
        with pytest.raises(EmptyCorpusError):
            build_index([], toy_model(3), toy_vocabulary(3))

    def test_histogram_width_mismatch_rejected(self):
        hs = [hist("x", [1, 2]), hist("y", [2, 1])]
        with pytest.raises(DimensionMismatchError):
            build_index(hs, toy_model(3), toy_vocabulary(3))

    def test_model_width_mismatch_rejected(self):
        hs = [hist("x", [1, 2, 3])]
        with pytest.raises(DimensionMismatchError):
            build_index(hs, toy_model(4), toy_vocabulary(3))

    def test_duplicate_ids_rejected(self):
        hs = [hist("x", [1, 2, 3]), hist("x", [3, 2, 1])]
        with pytest.raises(ValueError):
            build_index(hs, toy_model(3), toy_vocabulary(3))


def fsum_euclidean(a, b):
    return math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(a, b)))


def exhaustive_ranking(index, q, exclude_id=None):
    rows = []
    for i in range(index.size):
        if index.image_ids[i] == exclude_id:
            continue
        rows.append((fsum_euclidean(index.features[i], q), index.image_ids[i]))
    rows.sort()
    return rows


class TestGlobalMode:
    def test_self_retrieval_is_rank_one_at_zero_distance(self):
        index = toy_index(BASIC_ROWS)
        res = query_by_histogram(index, index.features[2], k=5, mode="global")
        assert res[0].rank == 1
        assert res[0].image_id == "q2"
        assert res[0].distance <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_matches_exhaustive_sort(self, data):
        n = data.draw(st.integers(min_value=1, max_value=12))
        dim = data.draw(st.integers(min_value=2, max_value=5))
        seed = data.draw(st.integers(min_value=0, max_value=10_000))
        rng = np.random.default_rng(seed)
        rows = [
            (f"img{i:02d}", rng.uniform(0.1, 1.0, dim), "a")
            for i in range(n)
        ]
        hs = [hist(i, v, lab) for i, v, lab in rows]
        index = build_index(hs, toy_model(dim), toy_vocabulary(dim))
        q = rng.uniform(0.1, 1.0, dim)
        q = q / q.sum()

        res = query_by_histogram(index, q, k=n, mode="global")
        oracle = exhaustive_ranking(index, q)
        assert [r.image_id for r in res] == [i for _, i in oracle]
        assert [r.rank for r in res] == list(range(1, n + 1))
        for r, (d, _) in zip(res, oracle):
            assert r.distance == pytest.approx(d, abs=1e-12)

    def test_distance_ties_break_by_image_id(self):
        index = toy_index([
            ("zz", [3, 3, 2], "a"),
            ("aa", [3, 3, 2], "a"),
            ("mm", [8, 1, 1], "a"),
        ])
        res = query_by_histogram(index, np.array([3, 3, 2]) / 8.0, k=3, mode="global")
        assert [r.image_id for r in res] == ["aa", "zz", "mm"]

    def test_k_truncates_to_index_size(self):
        index = toy_index(BASIC_ROWS)
        res = query_by_histogram(index, index.features[0], k=50, mode="global")
        assert len(res) == 5
        assert [r.rank for r in res] == [1, 2, 3, 4, 5]

    def test_exclusion_removes_the_query_image(self):
        index = toy_index(BASIC_ROWS)
        res = query_by_histogram(index, index.features[0], k=5,
                                 mode="global", exclude_id="q0")
        assert len(res) == 4
        assert "q0" not in {r.image_id for r in res}

    def test_excluding_the_only_image_is_an_error(self):
        index = toy_index([("solo", [1, 2, 3], "a")])
        with pytest.raises(EmptyIndexError):
            query_by_histogram(index, np.array([0.5, 0.3, 0.2]), k=1,
                               mode="global", exclude_id="solo")


class TestFilteredMode:
    def test_same_predicted_class_forms_the_prefix(self):
        index = toy_index(BASIC_ROWS)
        # Query predicted 'b', so q2/q3 (predicted 'b') must come first.
        res = query_by_histogram(index, np.array([0.1, 0.7, 0.2]), k=5, mode="filtered")
        labels = [r.predicted_label for r in res]
        n_same = labels.count("b")
        assert all(lab == "b" for lab in labels[:n_same])
        assert all(lab != "b" for lab in labels[n_same:])

    def test_both_blocks_are_distance_sorted(self):
        index = toy_index(BASIC_ROWS)
        q = np.array([0.1, 0.7, 0.2])
        res = query_by_histogram(index, q, k=5, mode="filtered")
        labels = [r.predicted_label for r in res]
        n_same = labels.count("b")
        for block in (res[:n_same], res[n_same:]):
            dists = [r.distance for r in block]
            assert dists == sorted(dists)

    def test_within_block_order_comes_from_the_global_oracle(self):
        index = toy_index(BASIC_ROWS)
        q = np.array([0.1, 0.7, 0.2])
        res = query_by_histogram(index, q, k=5, mode="filtered")
        oracle = exhaustive_ranking(index, q)
        order = {iid: pos for pos, (_, iid) in enumerate(oracle)}
        labels = [r.predicted_label for r in res]
        n_same = labels.count("b")
        for block in (res[:n_same], res[n_same:]):
            positions = [order[r.image_id] for r in block]
            assert positions == sorted(positions)

    def test_single_class_corpus_equals_global(self):
        rows = [(f"s{i}", [5 + i, 2, 1], "a") for i in range(4)]
        index = toy_index(rows)
        q = np.array([0.6, 0.3, 0.1])
        filtered = query_by_histogram(index, q, k=4, mode="filtered")
        glob = query_by_histogram(index, q, k=4, mode="global")
        assert [(r.image_id, r.distance) for r in filtered] == \
            [(r.image_id, r.distance) for r in glob]

    @pytest.mark.parametrize("mode", ["filtered", "global"])
    def test_smaller_k_is_a_prefix_of_larger_k(self, mode):
        index = toy_index(BASIC_ROWS)
        q = np.array([0.3, 0.5, 0.2])
        small = query_by_histogram(index, q, k=2, mode=mode)
        big = query_by_histogram(index, q, k=5, mode=mode)
        assert [(r.rank, r.image_id) for r in small] == \
            [(r.rank, r.image_id) for r in big[:2]]


class TestQueryValidation:
    def test_zero_mass_query_rejected(self):
        index = toy_index(BASIC_ROWS)
        with pytest.raises(DegenerateQueryError):
            query_by_histogram(index, np.zeros(3), k=3)

    def test_k_below_one_rejected(self):
        index = toy_index(BASIC_ROWS)
        with pytest.raises(ValueError):
            query_by_histogram(index, np.array([0.5, 0.3, 0.2]), k=0)

    def test_unknown_mode_rejected(self):
        index = toy_index(BASIC_ROWS)
        with pytest.raises(ValueError):
            query_by_histogram(index, np.array([0.5, 0.3, 0.2]), k=1, mode="fuzzy")

    def test_wrong_width_rejected(self):
        index = toy_index(BASIC_ROWS)
        with pytest.raises(DimensionMismatchError):
            query_by_histogram(index, np.array([0.5, 0.5]), k=1)

    def test_unknown_metric_rejected(self):
        index = toy_index(BASIC_ROWS)
        with pytest.raises(ValueError):
            query_by_histogram(index, np.array([0.5, 0.3, 0.2]), k=1, metric="manhattan")


class TestMetricsAndWeights:
    def test_cosine_distances_match_manual_formula(self):
        index = toy_index(BASIC_ROWS)
        q = np.array([0.2, 0.5, 0.3])
        res = query_by_histogram(index, q, k=5, mode="global", metric="cosine")
        by_id = {r.image_id: r.distance for r in res}
        for i in range(index.size):
            f = index.features[i]
            expected = 1.0 - float(f @ q) / (np.linalg.norm(f) * np.linalg.norm(q))
            assert by_id[index.image_ids[i]] == pytest.approx(expected, abs=1e-12)

    def test_cosine_identical_direction_is_zero(self):
        index = toy_index([("c0", [2, 1, 1], "a"), ("c1", [1, 2, 1], "a")])
        res = query_by_histogram(index, np.array([0.5, 0.25, 0.25]), k=1,
                                 mode="global", metric="cosine")
        assert res[0].image_id == "c0"
        assert res[0].distance == pytest.approx(0.0, abs=1e-12)

    def test_zeroed_weight_dimension_is_ignored(self):
        index = toy_index([
            ("w0", [4, 2, 9], "a"),
            ("w1", [4, 2, 1], "a"),
        ])
        # Bins 0 and 1 agree after normalization only under the weight
        # mask, so the masked distance ties and ids break it.
        q = np.array([4.0, 2.0, 5.0])
        q = q / q.sum()
        res = query_by_histogram(index, q, k=2, mode="global",
                                 weights=np.array([0.0, 0.0, 1.0]))
        d0 = abs(index.features[0][2] - q[2])
        assert res[0].distance == pytest.approx(d0, abs=1e-12)

    def test_wrong_weight_width_rejected(self):
        index = toy_index(BASIC_ROWS)
        with pytest.raises(ValueError):
            query_by_histogram(index, np.array([0.5, 0.3, 0.2]), k=1,
                               weights=np.ones(4))


def small_real_index(prune_fraction=0.8):
    """Six synthetic images, two classes, encoded exactly like a query."""
    spec = SyntheticCorpusSpec(classes=("blob_grid", "ring"), images_per_class=4)
    feats = []
    images = {}
    for ci, kind in enumerate(spec.classes):
        for ii in range(3):
            image, _ = corpus_image(spec, ci, ii)
            iid = f"{kind}/{ii}"
            descs = extract_descriptors(integral_image(image))
            feats.append(features_from_descriptors(iid, kind, descs))
            images[iid] = image
    pruned = prune_strongest(FeatureBag(tuple(feats)), prune_fraction)
    vocab = build_vocabulary(pruned, k=8, seed=3, prune_fraction=1.0)
    from bovw.svm import train_ovr

    hs = [encode_features(vocab, f) for f in pruned.images]
    model = train_ovr(hs, SvmHyperParams())
    return build_index(hs, model, vocab, prune_fraction=prune_fraction), images


class TestImageQueries:
    def test_query_finds_its_own_image_first(self):
        index, images = small_real_index()
        res = query(index, images["ring/1"], k=3, mode="global")
        assert res[0].image_id == "ring/1"
        assert res[0].distance <= 1e-9

    def test_featureless_image_raises_degenerate(self):
        index, _ = small_real_index()
        flat = GrayImage(np.full((64, 64), 0.5))
        with pytest.raises(DegenerateQueryError):
            query(index, flat, k=3)


class TestResultFormats:
    def make_results(self):
        index = toy_index(BASIC_ROWS)
        return query_by_histogram(index, np.array([0.5, 0.3, 0.2]), k=4)

    def test_jsonl_schema_and_rank_order(self):
        res = self.make_results()
        lines = results_to_jsonl(res).splitlines()
        assert len(lines) == len(res)
        for expected_rank, line in enumerate(lines, start=1):
            row = json.loads(line)
            assert set(row) == {"rank", "image_id", "distance", "predicted_label"}
            assert row["rank"] == expected_rank
            assert isinstance(row["distance"], float)

    def test_jsonl_distances_round_trip_exactly(self):
        res = self.make_results()
        parsed = [json.loads(line) for line in results_to_jsonl(res).splitlines()]
        for r, row in zip(res, parsed):
            assert row["distance"] == r.distance
            assert row["image_id"] == r.image_id

    def test_html_sheet_lists_every_result(self):
        res = self.make_results()
        paths = {r.image_id: f"/corpus/{r.image_id}.pgm" for r in res}
        page = results_to_html(res, paths, query_path="/corpus/query.pgm")
        assert page.lstrip().lower().startswith("<!doctype html") or "<html" in page.lower()
        assert page.count("<img") == len(res) + 1
        for r in res:
            assert f"/corpus/{r.image_id}.pgm" in page
