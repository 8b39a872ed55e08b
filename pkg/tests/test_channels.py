import numpy as np
import pytest

from spdetect.channels import (
    LBP_SENTINEL,
    acf_channels,
    lbp_codes,
    lowlevel9,
    orientation_votes,
    uniform_mapping,
)
from spdetect.errors import InvalidInput
from spdetect.imgcore import RasterImage, rgb_to_luv

from conftest import random_rgb


class TestLowLevel9:
    def test_position_planes(self):
        st = lowlevel9(np.zeros((4, 6), np.float32))
        for r in range(4):
            for c in range(6):
                assert st.data[0, r, c] == c
                assert st.data[1, r, c] == r

    def test_constant_image_zero_derivative_planes(self):
        st = lowlevel9(np.full((6, 6), 0.8, np.float32))
        assert np.all(st.data[2:7] == 0.0)

    def test_o2_pure_vertical_gradient(self):
        # intensity rises along y: Ix = 0, Iy = 1 -> atan2(1, 0) = pi/2 > 0
        p = np.tile(np.arange(6, dtype=np.float32)[:, None], (1, 5))
        st = lowlevel9(p)
        np.testing.assert_allclose(st.data[8, 2, 2], np.pi / 2, atol=1e-6)

    def test_o2_pure_horizontal_gradient(self):
        # Ix = 1, Iy = 0 -> atan2(0, 1) = 0, not > 0 -> O2 = pi
        p = np.tile(np.arange(6, dtype=np.float32), (5, 1))
        st = lowlevel9(p)
        np.testing.assert_allclose(st.data[8, 2, 2], np.pi, atol=1e-6)

    def test_o2_diagonal_negative(self):
        # Ix = -1, Iy = -1 -> atan2 = -3pi/4 -> O2 = pi/4
        xs = np.arange(6, dtype=np.float32)
        p = -(xs[None, :] + xs[:, None])
        st = lowlevel9(p)
        np.testing.assert_allclose(st.data[8, 2, 2], np.pi / 4, atol=1e-6)

    def test_o1_conventions(self):
        p = np.tile(np.arange(6, dtype=np.float32), (5, 1))  # Iy = 0, Ix != 0
        st = lowlevel9(p)
        np.testing.assert_allclose(st.data[7, 2, 2], np.pi / 2, atol=1e-6)
        st0 = lowlevel9(np.zeros((5, 5), np.float32))  # both zero
        assert np.all(st0.data[7] == 0.0)

    def test_ranges_on_random(self, rng):
        st = lowlevel9(rng.normal(size=(16, 16)).astype(np.float32))
        o1, o2 = st.data[7], st.data[8]
        assert np.all((o1 >= 0) & (o1 <= np.pi / 2 + 1e-6))
        assert np.all((o2 > 0) & (o2 <= np.pi + 1e-6))
        assert np.all(st.data[6] >= 0)

    def test_shift_invariance(self, rng):
        p = rng.normal(size=(10, 10)).astype(np.float32)
        a = lowlevel9(p)
        b = lowlevel9(p + np.float32(4.0))
        np.testing.assert_allclose(a.data, b.data, atol=2e-5)


class TestAcfChannels:
    def test_constant_image(self):
        luv = rgb_to_luv(RasterImage(np.full((3, 16, 16), 128.0, np.float32)))
        st = acf_channels(luv)
        assert st.count == 10
        assert np.all(st.data[3:] == 0.0)  # M and all orientation planes
        for i in range(3):
            assert np.ptp(st.data[i]) < 1e-6

    def test_plane_count_is_ten(self, rng):
        st = acf_channels(rgb_to_luv(random_rgb(rng, 16, 16)))
        assert st.count == 10

    def test_votes_conserve_magnitude(self, rng):
        mag = np.abs(rng.normal(size=(8, 8))).astype(np.float32)
        o2 = rng.uniform(1e-6, np.pi, size=(8, 8)).astype(np.float32)
        votes = orientation_votes(mag, o2)
        np.testing.assert_allclose(votes.sum(axis=0), mag, atol=1e-5)

    def test_vertical_step_edge_votes(self):
        # step along x -> Ix != 0, Iy = 0 -> O2 = pi: split between the two
        # bins whose shared boundary is the pi == 0 wrap point
        img = np.full((3, 16, 16), 40.0, np.float32)
        img[:, :, 8:] = 200.0
        luv = rgb_to_luv(RasterImage(img))
        lum = luv.plane(0)
        from spdetect.imgcore import gradient

        ix, iy = gradient(lum)
        mag = np.hypot(ix, iy)
        o2 = np.arctan2(iy, ix)
        o2 = np.where(o2 > 0, o2, o2 + np.float32(np.pi))
        votes = orientation_votes(mag, o2)
        active = mag > 1e-6
        np.testing.assert_allclose(votes[0][active], mag[active] / 2, atol=1e-6)
        np.testing.assert_allclose(votes[5][active], mag[active] / 2, atol=1e-6)
        for b in range(1, 5):
            assert np.all(votes[b][active] == 0.0)


class TestUniformMapping:
    def test_known_bytes(self):
        table = uniform_mapping()
        assert table[0x00] != LBP_SENTINEL
        assert table[0xFF] != LBP_SENTINEL
        assert table[0xAA] == LBP_SENTINEL

    def test_exactly_58_uniform_codes(self):
        table = uniform_mapping()
        uniform = table[table != LBP_SENTINEL]
        assert len(uniform) == 58

    def test_bijection_onto_0_to_57(self):
        table = uniform_mapping()
        uniform = sorted(table[table != LBP_SENTINEL])
        assert uniform == list(range(58))


def loop_lbp(p):
    """Independent per-pixel LBP oracle."""
    table = uniform_mapping()
    h, w = p.shape
    out = np.full((h, w), LBP_SENTINEL, dtype=np.uint8)
    offsets = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            byte = 0
            for dy, dx in offsets:
                byte = (byte << 1) | int(p[r + dy, c + dx] >= p[r, c])
            out[r, c] = table[byte]
    return out


class TestLbpCodes:
    def test_constant_plane_is_all_ones_byte(self):
        codes = lbp_codes(np.full((5, 5), 0.5, np.float32)).codes
        expected = uniform_mapping()[0xFF]
        assert np.all(codes[1:-1, 1:-1] == expected)

    def test_bright_center(self):
        p = np.ones((3, 3), np.float32)
        p[1, 1] = 9.0
        codes = lbp_codes(p).codes
        assert codes[1, 1] == uniform_mapping()[0x00]

    def test_matches_loop_oracle(self, rng):
        p = rng.normal(size=(5, 5)).astype(np.float32)
        np.testing.assert_array_equal(lbp_codes(p).codes, loop_lbp(p))

    def test_border_is_sentinel(self, rng):
        codes = lbp_codes(rng.normal(size=(4, 6)).astype(np.float32)).codes
        assert np.all(codes[0, :] == LBP_SENTINEL)
        assert np.all(codes[:, -1] == LBP_SENTINEL)

    def test_values_bounded(self, rng):
        codes = lbp_codes(rng.normal(size=(32, 32)).astype(np.float32)).codes
        assert codes.max() <= LBP_SENTINEL

    def test_too_small_rejected(self):
        with pytest.raises(InvalidInput):
            lbp_codes(np.zeros((2, 5), np.float32))
