"""Image loading and summed-area-table tests.

Box sums are checked against direct per-pixel summation (math.fsum) so
the table lookup never serves as its own oracle.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from bovw.errors import CorruptImageError, EmptyRectangleError, UnsupportedFormatError
from bovw.imgio import (
    MAX_SIDE,
    GrayImage,
    box_sum,
    clipped_box_sum,
    integral_image,
    load_grayscale,
    save_pgm,
)


def naive_box_sum(pixels: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> float:
    """Direct double-loop sum over the rectangle clamped to the image."""
    h, w = pixels.shape
    xa, xb = max(x0, 0), min(x1, w - 1)
    ya, yb = max(y0, 0), min(y1, h - 1)
    if xa > xb or ya > yb:
        return 0.0
    return math.fsum(float(pixels[y, x]) for y in range(ya, yb + 1) for x in range(xa, xb + 1))


small_images = hnp.arrays(
    np.float64,
    hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=20),
    elements=st.floats(0.0, 1.0, width=64),
)


class TestGrayImage:
    def test_valid_construction(self):
        img = GrayImage(np.zeros((3, 5)))
        assert img.height == 3 and img.width == 5

    def test_pixels_are_read_only(self):
        img = GrayImage(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            img.pixels[0, 0] = 1.0

    def test_rejects_wrong_rank(self):
        with pytest.raises(CorruptImageError):
            GrayImage(np.zeros(8))
        with pytest.raises(CorruptImageError):
            GrayImage(np.zeros((2, 2, 3)))

    def test_rejects_empty(self):
        with pytest.raises(CorruptImageError):
            GrayImage(np.zeros((0, 5)))

    def test_rejects_out_of_range(self):
        with pytest.raises(CorruptImageError):
            GrayImage(np.full((2, 2), 1.5))
        with pytest.raises(CorruptImageError):
            GrayImage(np.full((2, 2), -0.1))

    def test_rejects_non_finite(self):
        bad = np.zeros((2, 2))
        bad[0, 0] = np.nan
        with pytest.raises(CorruptImageError):
            GrayImage(bad)

    def test_rejects_oversized(self):
        with pytest.raises(UnsupportedFormatError):
            GrayImage(np.zeros((1, MAX_SIDE + 1)))

    def test_input_array_is_copied(self):
        src = np.zeros((2, 2))
        img = GrayImage(src)
        src[0, 0] = 1.0
        assert img.pixels[0, 0] == 0.0


class TestIntegralImage:
    def test_tiny_known_table(self):
        ii = integral_image(GrayImage(np.array([[0.1, 0.2], [0.3, 0.4]])))
        expected = np.array([[0.1, 0.3], [0.4, 1.0]])
        np.testing.assert_allclose(ii.table, expected, atol=1e-15)

    def test_last_entry_is_total(self):
        rng = np.random.default_rng(5)
        pix = rng.random((9, 13))
        ii = integral_image(GrayImage(pix))
        assert ii.table[-1, -1] == pytest.approx(math.fsum(pix.ravel()), abs=1e-11)

    @given(small_images)
    @settings(max_examples=60, deadline=None)
    def test_table_matches_prefix_sums(self, pix):
        ii = integral_image(GrayImage(pix))
        h, w = pix.shape
        y = (h - 1) // 2
        x = (w - 1) // 2
        assert ii.table[y, x] == pytest.approx(naive_box_sum(pix, 0, 0, x, y), abs=1e-10)


class TestBoxSum:
    @given(small_images, st.data())
    @settings(max_examples=120, deadline=None)
    def test_matches_naive_summation(self, pix, data):
        ii = integral_image(GrayImage(pix))
        h, w = pix.shape
        xs = sorted(data.draw(st.tuples(st.integers(-4, w + 4), st.integers(-4, w + 4))))
        ys = sorted(data.draw(st.tuples(st.integers(-4, h + 4), st.integers(-4, h + 4))))
        expected = naive_box_sum(pix, xs[0], ys[0], xs[1], ys[1])
        got = clipped_box_sum(ii, xs[0], ys[0], xs[1], ys[1])
        assert got == pytest.approx(expected, abs=1e-10)

    def test_whole_image(self):
        pix = np.linspace(0, 1, 12).reshape(3, 4)
        ii = integral_image(GrayImage(pix))
        assert box_sum(ii, 0, 0, 3, 2) == pytest.approx(pix.sum(), abs=1e-12)

    def test_single_pixel(self):
        pix = np.arange(6).reshape(2, 3) / 10.0
        ii = integral_image(GrayImage(pix))
        assert box_sum(ii, 2, 1, 2, 1) == pytest.approx(0.5, abs=1e-14)

    def test_clamps_overhang(self):
        pix = np.full((4, 4), 0.25)
        ii = integral_image(GrayImage(pix))
        # sticks out on every side; only the 4x4 image contributes
        assert box_sum(ii, -3, -3, 10, 10) == pytest.approx(4.0, abs=1e-12)

    def test_fully_outside_raises(self):
        ii = integral_image(GrayImage(np.ones((4, 4))))
        for rect in [(-5, 0, -1, 3), (0, -5, 3, -1), (4, 0, 9, 3), (0, 4, 3, 9)]:
            with pytest.raises(EmptyRectangleError):
                box_sum(ii, *rect)

    def test_fully_outside_clipped_is_zero(self):
        ii = integral_image(GrayImage(np.ones((4, 4))))
        assert clipped_box_sum(ii, -5, -5, -1, -1) == 0.0

    def test_inverted_rectangle_raises(self):
        ii = integral_image(GrayImage(np.ones((4, 4))))
        with pytest.raises(ValueError):
            box_sum(ii, 2, 0, 1, 3)
        with pytest.raises(ValueError):
            box_sum(ii, 0, 2, 3, 1)

    def test_vectorized_coordinates(self):
        rng = np.random.default_rng(11)
        pix = rng.random((8, 8))
        ii = integral_image(GrayImage(pix))
        xs = np.array([0, 2, -3])
        got = clipped_box_sum(ii, xs, 1, xs + 2, 3)
        for k, x in enumerate(xs):
            assert got[k] == pytest.approx(naive_box_sum(pix, int(x), 1, int(x) + 2, 3), abs=1e-10)

    @given(small_images, st.data())
    @settings(max_examples=60, deadline=None)
    def test_additive_split(self, pix, data):
        h, w = pix.shape
        ii = integral_image(GrayImage(pix))
        xm = data.draw(st.integers(0, w - 1))
        whole = clipped_box_sum(ii, 0, 0, w - 1, h - 1)
        left = clipped_box_sum(ii, 0, 0, xm, h - 1)
        right = clipped_box_sum(ii, xm + 1, 0, w - 1, h - 1)
        assert whole == pytest.approx(left + right, abs=1e-10)


class TestPgmRoundTrip:
    @pytest.mark.parametrize("binary", [True, False])
    def test_round_trip_exact(self, tmp_path, binary):
        rng = np.random.default_rng(3)
        quantized = rng.integers(0, 256, size=(7, 11)) / 255.0
        img = GrayImage(quantized)
        path = tmp_path / "img.pgm"
        save_pgm(img, path, binary=binary)
        loaded = load_grayscale(path)
        np.testing.assert_array_equal(loaded.pixels, img.pixels)

    def test_header_comments_are_skipped(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P2\n# a comment\n2 # inline\n2\n255\n0 128\n255 64\n")
        img = load_grayscale(path)
        np.testing.assert_allclose(
            img.pixels, np.array([[0, 128], [255, 64]]) / 255.0, atol=1e-15
        )

    def test_non_255_maxval_normalizes(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P2\n2 1\n100\n0 100\n")
        img = load_grayscale(path)
        np.testing.assert_allclose(img.pixels, [[0.0, 1.0]], atol=1e-15)

    def test_p5_payload_mismatch(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(CorruptImageError):
            load_grayscale(path)

    def test_p2_payload_mismatch(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P2\n2 2\n255\n1 2 3\n")
        with pytest.raises(CorruptImageError):
            load_grayscale(path)

    def test_sample_above_maxval(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P2\n2 1\n100\n5 101\n")
        with pytest.raises(CorruptImageError):
            load_grayscale(path)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(UnsupportedFormatError):
            load_grayscale(path)

    def test_unknown_magic_rejected(self, tmp_path):
        path = tmp_path / "odd.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(UnsupportedFormatError):
            load_grayscale(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "h.pgm"
        path.write_bytes(b"P5\n4 4")
        with pytest.raises(CorruptImageError):
            load_grayscale(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_grayscale(tmp_path / "nope.pgm")


class TestPng:
    def test_grayscale_png_round_trip(self, tmp_path):
        from PIL import Image

        values = np.arange(16, dtype=np.uint8).reshape(4, 4) * 17
        path = tmp_path / "g.png"
        Image.fromarray(values, mode="L").save(path)
        img = load_grayscale(path)
        np.testing.assert_allclose(img.pixels, values / 255.0, atol=1e-15)

    def test_rgb_png_rejected(self, tmp_path):
        from PIL import Image

        path = tmp_path / "c.png"
        Image.new("RGB", (4, 4), (10, 20, 30)).save(path)
        with pytest.raises(UnsupportedFormatError):
            load_grayscale(path)
