import numpy as np
import pytest

from spdetect.channels import lowlevel9, uniform_mapping
from spdetect.errors import InvalidInput, OutOfBounds
from spdetect.imgcore import RasterImage, Rect, rgb_to_luv
from spdetect.pooling import (
    CORR_PAIRS,
    POOLED_CORR_PAIRS,
    POOLED_VAR_FEATURES,
    PoolConfig,
    assemble,
    cov_integrals,
    dump_stack,
    load_stack,
    patch_stats,
    pool_max,
    sp_cov_stack,
    sp_lbp_stack,
)

from conftest import random_rgb


def two_pass_stats(stack_data, x, y, w, h):
    """Independent two-pass variance/correlation oracle over a patch."""
    patch = stack_data[:, y : y + h, x : x + w].astype(np.float64).reshape(9, -1)
    mean = patch.mean(axis=1)
    centered = patch - mean[:, None]
    var = (centered**2).mean(axis=1)
    corr = np.zeros(len(CORR_PAIRS))
    for k, (i, j) in enumerate(CORR_PAIRS):
        if var[i] <= 1e-18 or var[j] <= 1e-18:
            corr[k] = 0.0
        else:
            cov = (centered[i] * centered[j]).mean()
            corr[k] = np.clip(cov / np.sqrt(var[i] * var[j]), -1.0, 1.0)
    return var, corr


def random_stack(rng, w, h):
    from spdetect.channels import LowLevelStack

    return LowLevelStack(rng.normal(size=(9, h, w)).astype(np.float32))


class TestCovIntegrals:
    def test_constant_stack_product_sums(self):
        from spdetect.channels import LowLevelStack

        consts = np.arange(1.0, 10.0, dtype=np.float32)
        stack = LowLevelStack(np.broadcast_to(consts[:, None, None], (9, 8, 8)).copy())
        ci = cov_integrals(stack)
        from spdetect.pooling import PROD_PAIRS, _rect_sums

        sums = _rect_sums(ci.prod, np.array([2]), np.array([1]), 4, 5)
        n = 4 * 5
        for k, (i, j) in enumerate(PROD_PAIRS):
            assert sums[k, 0, 0] == pytest.approx(n * consts[i] * consts[j], rel=1e-9)

    def test_moments_match_two_pass(self, rng):
        stack = random_stack(rng, 20, 14)
        ci = cov_integrals(stack)
        stats = patch_stats(ci, Rect(3, 2, 9, 8))
        var_o, corr_o = two_pass_stats(stack.data, 3, 2, 9, 8)
        np.testing.assert_allclose(stats.var, var_o, atol=1e-6)
        np.testing.assert_allclose(stats.corr, corr_o, atol=1e-6)

    def test_single_pixel_patch_zero_variance(self, rng):
        stack = random_stack(rng, 6, 6)
        stats = patch_stats(cov_integrals(stack), Rect(2, 3, 1, 1))
        assert np.all(stats.var == 0.0)
        assert np.all(stats.corr == 0.0)


class TestPatchStats:
    def test_identical_planes_give_corr_one(self, rng):
        from spdetect.channels import LowLevelStack

        plane = rng.normal(size=(8, 8)).astype(np.float32)
        data = np.stack([plane] * 9)
        stats = patch_stats(cov_integrals(LowLevelStack(data)), Rect(0, 0, 8, 8))
        assert np.all(stats.var > 0)
        np.testing.assert_allclose(stats.corr, 1.0, atol=1e-9)

    def test_constant_patch_convention(self):
        from spdetect.channels import LowLevelStack

        data = np.full((9, 8, 8), 3.0, np.float32)
        stats = patch_stats(cov_integrals(LowLevelStack(data)), Rect(1, 1, 5, 5))
        assert np.all(stats.var == 0.0)
        assert np.all(stats.corr == 0.0)

    def test_random_patch_against_oracle(self, rng):
        stack = random_stack(rng, 16, 16)
        ci = cov_integrals(stack)
        stats = patch_stats(ci, Rect(4, 6, 8, 8))
        var_o, corr_o = two_pass_stats(stack.data, 4, 6, 8, 8)
        np.testing.assert_allclose(stats.var, var_o, atol=1e-5)
        np.testing.assert_allclose(stats.corr, corr_o, atol=1e-5)

    def test_out_of_bounds(self, rng):
        ci = cov_integrals(random_stack(rng, 8, 8))
        with pytest.raises(OutOfBounds):
            patch_stats(ci, Rect(4, 4, 8, 8))

    def test_bounds(self, rng):
        stack = random_stack(rng, 24, 24)
        ci = cov_integrals(stack)
        for _ in range(16):
            x, y = int(rng.integers(12)), int(rng.integers(12))
            stats = patch_stats(ci, Rect(x, y, 8, 8))
            assert np.all(stats.var >= 0)
            assert np.all(np.abs(stats.corr) <= 1.0)


def brute_force_sp_cov(img, scale, grid_h, grid_w):
    """Enumerate patches, compute the pooled 42-vector per cell directly."""
    lum = rgb_to_luv(img).plane(0)
    stack = lowlevel9(lum).data
    h, w = lum.shape
    cells = np.zeros((42, grid_h, grid_w), dtype=np.float64)
    seen = np.zeros((grid_h, grid_w), dtype=bool)
    for y in range(h - scale + 1):
        for x in range(w - scale + 1):
            cx, cy = x // 4, y // 4
            if cx >= grid_w or cy >= grid_h:
                continue
            var, corr = two_pass_stats(stack, x, y, scale, scale)
            vec = np.concatenate(
                [
                    var[list(POOLED_VAR_FEATURES)],
                    [corr[k] for k, p in enumerate(CORR_PAIRS) if p in POOLED_CORR_PAIRS],
                ]
            )
            if seen[cy, cx]:
                cells[:, cy, cx] = np.maximum(cells[:, cy, cx], vec)
            else:
                cells[:, cy, cx] = vec
                seen[cy, cx] = True
    return cells


class TestSpCovStack:
    def test_channel_count_136(self, rng):
        st = sp_cov_stack(random_rgb(rng, 64, 128))
        assert st.count == 136

    def test_constant_image_pooled_planes_zero(self):
        img = RasterImage(np.full((3, 64, 64), 77.0, np.float32))
        st = sp_cov_stack(img)
        assert np.all(st.data[10:] == 0.0)

    def test_pooled_planes_match_brute_force(self, rng):
        img = random_rgb(rng, 32, 40)
        pool = PoolConfig(cov_patch_sizes=(8,))
        st = sp_cov_stack(img, pool)
        oracle = brute_force_sp_cov(img, 8, 10, 8)
        np.testing.assert_allclose(st.data[10:52], oracle, atol=1e-5)

    def test_translation_equivariance(self, rng):
        big = random_rgb(rng, 96, 160)
        a = RasterImage(big.data[:, 0:128, 0:64])
        b = RasterImage(big.data[:, 4:132, 4:68])
        sa = sp_cov_stack(a)
        sb = sp_cov_stack(b)
        for base, scale in ((10, 8), (52, 16), (94, 32)):
            # compare cells whose pooled patches are fully contained in both
            # crops: the A-side cell cx+1 pools anchors up to 4cx+7, so the
            # patch extent requires 4cx+7+scale <= 64 (same for y with 128)
            last = (57 - scale) // 4
            lasty = (121 - scale) // 4
            np.testing.assert_allclose(
                sb.data[base : base + 42, 1 : lasty + 1, 1 : last + 1],
                sa.data[base : base + 42, 2 : lasty + 2, 2 : last + 2],
                atol=1e-4,
            )

    def test_small_image_warns_and_zeroes(self, rng):
        img = random_rgb(rng, 24, 24)
        with pytest.warns(UserWarning):
            st = sp_cov_stack(img)
        assert st.count == 136
        assert np.all(st.data[94:136] == 0.0)  # 32-px patch planes


def brute_force_sp_lbp(lum, grid_h, grid_w):
    from spdetect.channels import lbp_codes

    codes = lbp_codes(lum).codes
    h, w = codes.shape
    ny, nx = h - 3, w - 3
    hists = np.zeros((58, ny, nx))
    for y in range(ny):
        for x in range(nx):
            patch = codes[y : y + 4, x : x + 4]
            for c in patch.ravel():
                if c < 58:
                    hists[c, y, x] += 1
    pooled = np.zeros((58, grid_h, grid_w))
    for cy in range(grid_h):
        for cx in range(grid_w):
            ys = [y for y in range(4 * cy, 4 * cy + 8) if y < ny]
            xs = [x for x in range(4 * cx, 4 * cx + 8) if x < nx]
            if ys and xs:
                pooled[:, cy, cx] = hists[:, ys][:, :, xs].max(axis=(1, 2))
    return hists, pooled


class TestSpLbpStack:
    def test_plane_count_116(self, rng):
        st = sp_lbp_stack(rng.normal(size=(64, 32)).astype(np.float32))
        assert st.count == 116

    def test_constant_image_mass_in_one_code(self):
        st = sp_lbp_stack(np.full((32, 32), 0.5, np.float32))
        code = int(uniform_mapping()[0xFF])
        cell = st.data[58:]
        other = np.delete(cell, code, axis=0)
        assert np.all(other == 0.0)
        assert cell[code].sum() > 0

    def test_pooled_matches_brute_force(self, rng):
        lum = rng.normal(size=(40, 24)).astype(np.float32)
        st = sp_lbp_stack(lum)
        _, pooled_o = brute_force_sp_lbp(lum, 10, 6)
        np.testing.assert_allclose(st.data[:58], pooled_o, atol=1e-6)

    def test_pooling_dominance(self, rng):
        lum = rng.normal(size=(32, 32)).astype(np.float32)
        st = sp_lbp_stack(lum)
        hists, _ = brute_force_sp_lbp(lum, 8, 8)
        # every pooled cell value >= the patch histogram at its anchor
        for cy in range(7):
            for cx in range(7):
                assert np.all(
                    st.data[:58, cy, cx] >= hists[:, 4 * cy, 4 * cx] - 1e-9
                )


class TestPoolMax:
    def test_no_pooling_config_reproduces_per_patch(self, rng):
        """Patch stride = pooling region = 4: each cell holds its own patch."""
        img = random_rgb(rng, 32, 32)
        pool = PoolConfig(cov_patch_sizes=(8,), cov_patch_stride=4)
        st = sp_cov_stack(img, pool)
        lum = rgb_to_luv(img).plane(0)
        ci = cov_integrals(lowlevel9(lum))
        sel = [k for k, p in enumerate(CORR_PAIRS) if p in POOLED_CORR_PAIRS]
        for cy in range(6):  # cells with a fully contained anchored patch
            for cx in range(6):
                stats = patch_stats(ci, Rect(4 * cx, 4 * cy, 8, 8))
                vec = np.concatenate([stats.var[list(POOLED_VAR_FEATURES)], stats.corr[sel]])
                np.testing.assert_allclose(st.data[10:52, cy, cx], vec, atol=1e-6)

    def test_empty_cells_zero(self):
        vals = np.ones((2, 3, 3))
        out = pool_max(vals, 1, 4, 4, 4, 4)
        assert np.all(out[:, :1, :1] == 1.0)
        assert np.all(out[:, 2:, :] == 0.0)


class TestAssemble:
    @pytest.mark.parametrize(
        "config,count",
        [
            ("M+O+LUV+LBP", 68),
            ("sp-Cov+LUV", 136),
            ("sp-Cov+M+O+LUV", 143),
            ("sp-Cov+sp-LBP+M+O+LUV", 259),
        ],
    )
    def test_counts_match_table(self, rng, config, count):
        st = assemble(random_rgb(rng, 64, 128), config)
        assert st.count == count
        assert len(st.names) == count

    def test_unknown_config(self, rng):
        with pytest.raises(InvalidInput):
            assemble(random_rgb(rng, 64, 64), "HOG")

    def test_dump_round_trip(self, rng, tmp_path):
        st = assemble(random_rgb(rng, 32, 32), "M+O+LUV+LBP")
        path = tmp_path / "stack.bin"
        dump_stack(st, path)
        back = load_stack(path)
        np.testing.assert_array_equal(back.data, st.data)
        assert back.names == st.names
