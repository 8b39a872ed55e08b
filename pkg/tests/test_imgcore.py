import numpy as np
import pytest

from spdetect.errors import InvalidInput, OutOfBounds
from spdetect.imgcore import (
    LUV_SCALE,
    RasterImage,
    Rect,
    aggregate,
    gradient,
    integral,
    luminance,
    read_pnm,
    rect_sum,
    resample,
    rgb_to_luv,
    second_derivative,
    write_pnm,
)

from conftest import random_rgb


def reference_luv_pixel(r, g, b):
    """Independent scalar CIE L*u*v* computation (D65, linear RGB)."""
    r, g, b = r / 255.0, g / 255.0, b / 255.0
    x = 0.412453 * r + 0.357580 * g + 0.180423 * b
    y = 0.212671 * r + 0.715160 * g + 0.072169 * b
    z = 0.019334 * r + 0.119193 * g + 0.950227 * b
    xn, yn, zn = 0.950456, 1.0, 1.088754
    t = y / yn
    if t > 0.008856:
        lum = 116.0 * t ** (1.0 / 3.0) - 16.0
    else:
        lum = (24389.0 / 27.0) * t
    dn = xn + 15.0 * yn + 3.0 * zn
    un, vn = 4.0 * xn / dn, 9.0 * yn / dn
    d = x + 15.0 * y + 3.0 * z
    up = 4.0 * x / d if d > 0 else un
    vp = 9.0 * y / d if d > 0 else vn
    u = 13.0 * lum * (up - un)
    v = 13.0 * lum * (vp - vn)
    s = LUV_SCALE
    return (
        lum / 100.0,
        (u - s["u_lo"]) / (s["u_hi"] - s["u_lo"]),
        (v - s["v_lo"]) / (s["v_hi"] - s["v_lo"]),
    )


class TestRasterImage:
    def test_shape_validation(self):
        with pytest.raises(InvalidInput):
            RasterImage(np.zeros((2, 2), np.float32))
        with pytest.raises(InvalidInput):
            RasterImage(np.zeros((1, 0, 3), np.float32))

    def test_immutability(self):
        img = RasterImage(np.zeros((1, 2, 2), np.float32))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0


class TestRgbToLuv:
    def test_black_has_zero_luminance(self):
        img = RasterImage(np.zeros((3, 4, 4), np.float32))
        assert np.all(rgb_to_luv(img).plane(0) == 0.0)

    def test_white_luminance_is_one(self):
        img = RasterImage(np.full((3, 4, 4), 255.0, np.float32))
        np.testing.assert_allclose(rgb_to_luv(img).plane(0), 1.0, atol=1e-6)

    def test_matches_reference_formula(self, rng):
        img = random_rgb(rng, 5, 4)
        out = rgb_to_luv(img)
        for row in range(4):
            for col in range(5):
                expected = reference_luv_pixel(*(img.data[:, row, col]))
                np.testing.assert_allclose(out.data[:, row, col], expected, atol=1e-5)

    def test_plane_order_matters(self, rng):
        img = random_rgb(rng, 6, 6)
        bgr = RasterImage(img.data[::-1])
        a, b = rgb_to_luv(img), rgb_to_luv(bgr)
        assert not np.allclose(a.data, b.data, atol=1e-4)

    def test_wrong_plane_count(self):
        with pytest.raises(InvalidInput):
            rgb_to_luv(RasterImage(np.zeros((1, 4, 4), np.float32)))


class TestLuminance:
    def test_black(self):
        img = rgb_to_luv(RasterImage(np.zeros((3, 3, 3), np.float32)))
        assert np.all(luminance(img).data == 0.0)

    def test_white_is_one(self):
        img = rgb_to_luv(RasterImage(np.full((3, 3, 3), 255.0, np.float32)))
        np.testing.assert_allclose(luminance(img).data, 1.0, atol=1e-6)

    def test_single_pixel_identity(self):
        img = RasterImage(np.array([[[0.37]]], np.float32))
        assert luminance(img).data[0, 0, 0] == np.float32(0.37)

    def test_plane_count(self):
        with pytest.raises(InvalidInput):
            luminance(RasterImage(np.zeros((2, 3, 3), np.float32)))


def loop_gradient(p):
    h, w = p.shape
    ix = np.zeros_like(p)
    iy = np.zeros_like(p)
    for r in range(h):
        for c in range(w):
            cl = p[r, max(c - 1, 0)]
            cr = p[r, min(c + 1, w - 1)]
            ix[r, c] = (cr - cl) * 0.5
            cu = p[max(r - 1, 0), c]
            cd = p[min(r + 1, h - 1), c]
            iy[r, c] = (cd - cu) * 0.5
    return ix, iy


def loop_second(p):
    # interior: [1, -2, 1]; borders: the replicated-edge one-sided difference
    h, w = p.shape
    ixx = np.zeros_like(p)
    iyy = np.zeros_like(p)
    for r in range(h):
        for c in range(w):
            if 0 < c < w - 1:
                ixx[r, c] = p[r, c + 1] - 2 * p[r, c] + p[r, c - 1]
            elif w > 1:
                ixx[r, c] = p[r, 1 if c == 0 else w - 2] - p[r, c]
            if 0 < r < h - 1:
                iyy[r, c] = p[r + 1, c] - 2 * p[r, c] + p[r - 1, c]
            elif h > 1:
                iyy[r, c] = p[1 if r == 0 else h - 2, c] - p[r, c]
    return ixx, iyy


class TestDerivatives:
    def test_constant_plane(self):
        ix, iy = gradient(np.full((5, 7), 3.25, np.float32))
        assert np.all(ix == 0) and np.all(iy == 0)

    def test_ramp(self):
        xs = np.tile(np.arange(8, dtype=np.float32), (6, 1))
        ix, iy = gradient(xs)
        assert np.all(ix[:, 1:-1] == 1.0)
        assert np.all(iy == 0.0)

    def test_gradient_matches_loop_oracle(self, rng):
        p = rng.normal(size=(7, 7)).astype(np.float32)
        ix, iy = gradient(p)
        ox, oy = loop_gradient(p)
        np.testing.assert_array_equal(ix, ox)
        np.testing.assert_array_equal(iy, oy)

    def test_second_ramp_is_zero(self):
        xs = np.tile(np.arange(8, dtype=np.float32), (6, 1))
        ixx, _ = second_derivative(xs)
        assert np.all(ixx[:, 1:-1] == 0.0)

    def test_second_quadratic(self):
        xs = np.tile(np.arange(9, dtype=np.float32) ** 2, (4, 1))
        ixx, _ = second_derivative(xs)
        assert np.all(ixx[:, 1:-1] == 2.0)

    def test_second_matches_loop_oracle(self, rng):
        p = rng.normal(size=(6, 9)).astype(np.float32)
        ixx, iyy = second_derivative(p)
        oxx, oyy = loop_second(p)
        np.testing.assert_array_equal(ixx, oxx)
        np.testing.assert_array_equal(iyy, oyy)

    def test_linearity(self, rng):
        p = rng.normal(size=(6, 6)).astype(np.float32)
        q = rng.normal(size=(6, 6)).astype(np.float32)
        a, b = 2.0, -3.0
        for op in (gradient, second_derivative):
            left = op(a * p + b * q)
            right = [a * u + b * v for u, v in zip(op(p), op(q))]
            np.testing.assert_allclose(left[0], right[0], atol=1e-5)
            np.testing.assert_allclose(left[1], right[1], atol=1e-5)


class TestIntegral:
    def test_all_ones(self):
        ii = integral(np.ones((3, 3), np.float32))
        assert rect_sum(ii, Rect(0, 0, 3, 3)) == 9.0

    def test_single_pixel_rects(self, rng):
        p = rng.normal(size=(4, 5)).astype(np.float32)
        ii = integral(p)
        for r in range(4):
            for c in range(5):
                assert rect_sum(ii, Rect(c, r, 1, 1)) == pytest.approx(p[r, c], rel=1e-9)

    def test_random_rects_match_direct_sum(self, rng):
        p = rng.normal(size=(16, 16)).astype(np.float32)
        ii = integral(p)
        for _ in range(100):
            x, y = int(rng.integers(16)), int(rng.integers(16))
            w = int(rng.integers(1, 17 - x))
            h = int(rng.integers(1, 17 - y))
            direct = float(p[y : y + h, x : x + w].astype(np.float64).sum())
            got = rect_sum(ii, Rect(x, y, w, h))
            assert got == pytest.approx(direct, rel=1e-9, abs=1e-9)

    def test_out_of_bounds(self):
        ii = integral(np.ones((4, 4), np.float32))
        with pytest.raises(OutOfBounds):
            rect_sum(ii, Rect(2, 2, 3, 3))

    def test_origin_row_and_column_zero(self, rng):
        ii = integral(rng.normal(size=(5, 5)).astype(np.float32))
        assert np.all(ii.table[0, :] == 0) and np.all(ii.table[:, 0] == 0)


class TestResample:
    def test_identity_dims(self, rng):
        img = random_rgb(rng, 6, 4)
        out = resample(img, 6, 4)
        np.testing.assert_array_equal(out.data, img.data)

    def test_constant_stays_constant(self):
        img = RasterImage(np.full((2, 5, 5), 7.5, np.float32))
        out = resample(img, 9, 3)
        assert np.all(out.data == 7.5)

    def test_checkerboard_halving_gives_midgray(self):
        board = np.indices((8, 8)).sum(axis=0) % 2
        img = RasterImage(board[None].astype(np.float32))
        out = resample(img, 4, 4)
        np.testing.assert_allclose(out.data[0, 1:-1, 1:-1], 0.5, atol=1e-6)

    def test_zero_dim_rejected(self, rng):
        with pytest.raises(InvalidInput):
            resample(random_rgb(rng, 4, 4), 0, 4)


class TestAggregate:
    def test_constant_mean(self):
        out = aggregate(np.full((4, 4), 2.5, np.float32), 4, "mean")
        assert out.shape == (1, 1) and out[0, 0] == 2.5

    def test_cell_one_identity(self, rng):
        p = rng.normal(size=(3, 5)).astype(np.float32)
        for mode in ("mean", "sum", "max"):
            np.testing.assert_allclose(aggregate(p, 1, mode), p, atol=1e-7)

    def test_max_matches_loop(self, rng):
        p = rng.normal(size=(8, 8)).astype(np.float32)
        out = aggregate(p, 4, "max")
        for r in range(2):
            for c in range(2):
                assert out[r, c] == p[4 * r : 4 * r + 4, 4 * c : 4 * c + 4].max()

    def test_partial_cells_discarded(self, rng):
        p = rng.normal(size=(9, 11)).astype(np.float32)
        assert aggregate(p, 4, "sum").shape == (2, 2)


class TestPnmIO:
    def test_round_trip(self, rng, tmp_path):
        img = RasterImage(rng.integers(0, 256, size=(3, 6, 5)).astype(np.float32))
        path = tmp_path / "img.ppm"
        write_pnm(img, path)
        back = read_pnm(path)
        np.testing.assert_array_equal(back.data, img.data)

    def test_gray_round_trip(self, rng, tmp_path):
        img = RasterImage(rng.integers(0, 256, size=(1, 3, 7)).astype(np.float32))
        path = tmp_path / "img.pgm"
        write_pnm(img, path)
        np.testing.assert_array_equal(read_pnm(path).data, img.data)

    def test_comment_handling(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# comment line\n2 2\n255\n\x00\x10\x20\x30")
        img = read_pnm(path)
        assert img.width == 2 and img.height == 2
        assert img.data[0, 1, 1] == 0x30
