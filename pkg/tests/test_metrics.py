import math

import numpy as np
import pytest

from specklediff.metrics import (TABLE_HEADER, coeff_variation, compute_report,
                                 edge_correlation, mssim, psnr,
                                 ratio_image_ideal_variance, ratio_image_stats,
                                 table_row)
from specklediff.speckle import SpeckleConfig, nakagami_mean, speckle_field


class TestPsnr:
    def test_identical_is_infinite(self):
        u = np.arange(20.0).reshape(4, 5)
        assert psnr(u, u, peak=255.0) == math.inf

    def test_closed_form(self):
        # constant offset of 25.5 against peak 255:
        # 20 log10(255 / 25.5) = 20 log10(10) = 20
        ref = np.full((8, 8), 100.0)
        test = ref + 25.5
        assert abs(psnr(test, ref, peak=255.0) - 20.0) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 255, (16, 16))
        b = rng.uniform(0, 255, (16, 16))
        assert abs(psnr(a, b, 255.0) - psnr(b, a, 255.0)) < 1e-12

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(1)
        ref = rng.uniform(50, 200, (32, 32))
        p1 = psnr(ref + rng.normal(0, 1, ref.shape), ref, 255.0)
        p2 = psnr(ref + rng.normal(0, 10, ref.shape), ref, 255.0)
        assert p1 > p2

    def test_peak_parameter(self):
        ref = np.zeros((4, 4))
        test = np.full((4, 4), 0.1)
        assert abs(psnr(test, ref, peak=1.0) - 20.0) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.zeros((3, 3)), 255.0)


class TestMssim:
    def test_identical_is_one(self):
        rng = np.random.default_rng(2)
        u = rng.uniform(0, 255, (32, 32))
        assert mssim(u, u, 255.0) == 1.0

    def test_constant_pair_luminance_only(self):
        # both windows constant: structure and contrast terms drop out and
        # the score reduces to the luminance term
        a = np.full((16, 16), 100.0)
        b = np.full((16, 16), 120.0)
        c1 = (0.01 * 255.0) ** 2
        expected = (2 * 100.0 * 120.0 + c1) / (100.0 ** 2 + 120.0 ** 2 + c1)
        assert abs(mssim(a, b, 255.0) - expected) < 1e-12

    def test_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.uniform(0, 255, (24, 24))
            b = rng.uniform(0, 255, (24, 24))
            s = mssim(a, b, 255.0)
            assert -1.0 <= s <= 1.0

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(4)
        ref = rng.uniform(50, 200, (48, 48))
        s1 = mssim(ref + rng.normal(0, 2, ref.shape), ref, 255.0)
        s2 = mssim(ref + rng.normal(0, 30, ref.shape), ref, 255.0)
        assert s1 > s2

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            mssim(np.zeros((8, 8)), np.zeros((8, 8)), 255.0)


class TestEdgeCorrelation:
    def test_identical_is_one(self):
        rng = np.random.default_rng(5)
        u = rng.uniform(0, 255, (20, 20))
        assert edge_correlation(u, u) == 1.0

    def test_constant_offset_is_one(self):
        # the high-pass removes the DC shift entirely
        rng = np.random.default_rng(6)
        u = rng.uniform(0, 255, (20, 20))
        assert abs(edge_correlation(u + 40.0, u) - 1.0) < 1e-12

    def test_constant_image_is_zero(self):
        u = np.full((12, 12), 7.0)
        rng = np.random.default_rng(7)
        v = rng.uniform(0, 255, (12, 12))
        assert edge_correlation(u, v) == 0.0
        assert edge_correlation(v, u) == 0.0

    def test_negated_edges(self):
        rng = np.random.default_rng(8)
        u = rng.uniform(0, 255, (20, 20))
        assert abs(edge_correlation(-u, u) + 1.0) < 1e-12

    def test_bounded(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            a = rng.uniform(0, 255, (16, 16))
            b = rng.uniform(0, 255, (16, 16))
            assert -1.0 - 1e-12 <= edge_correlation(a, b) <= 1.0 + 1e-12


class TestRatioStats:
    def test_perfect_despeckler_ratio_is_noise(self):
        # restored == clean leaves the ratio equal to the speckle field
        clean = np.full((200, 200), 10.0)
        n = speckle_field(clean.shape, SpeckleConfig(looks=1, seed=3))
        noisy = clean * n
        st = ratio_image_stats(noisy, clean, looks=1)
        assert abs(st.ri_m - np.mean(n)) < 1e-12
        assert abs(st.ri_v - np.var(n)) < 1e-12

    def test_identity_despeckler(self):
        # restored == noisy gives ratio 1 everywhere
        rng = np.random.default_rng(10)
        noisy = rng.uniform(1, 10, (16, 16))
        st = ratio_image_stats(noisy, noisy, looks=4)
        assert st.ri_m == 1.0
        assert st.ri_v == 0.0

    @pytest.mark.parametrize("looks", [1, 3, 5, 8])
    def test_normalized_variance_matches_exact_ideal(self, looks):
        # exact normalized ratio variance is 1/E[n]^2 - 1; the textbook
        # (4/pi - 1)/L value is its first-order approximation and coincides
        # exactly only at one look
        clean = np.full((1000, 1000), 5.0)
        n = speckle_field(clean.shape, SpeckleConfig(looks=looks, seed=17))
        st = ratio_image_stats(clean * n, clean, looks=looks)
        exact = 1.0 / nakagami_mean(looks) ** 2 - 1.0
        assert abs(st.ri_v_norm - exact) / exact < 0.02
        assert st.ri_v_ideal == ratio_image_ideal_variance(looks)
        if looks == 1:
            approx = 4.0 / math.pi - 1.0
            assert abs(exact - approx) < 1e-12
            assert abs(st.ri_v_norm - approx) / approx < 0.02

    def test_ideal_variance_l1_closed_form(self):
        assert abs(ratio_image_ideal_variance(1) - (4.0 / math.pi - 1.0)) \
            < 1e-12

    def test_ideal_variance_scales_inversely(self):
        for looks in (2, 4, 8):
            expected = (4.0 / math.pi - 1.0) / looks
            assert abs(ratio_image_ideal_variance(looks) - expected) < 1e-12

    def test_scaling_invariance(self):
        # ratio stats are invariant to a global gain on both images
        rng = np.random.default_rng(11)
        noisy = rng.uniform(1, 10, (32, 32))
        restored = rng.uniform(1, 10, (32, 32))
        a = ratio_image_stats(noisy, restored, looks=2)
        b = ratio_image_stats(7.0 * noisy, 7.0 * restored, looks=2)
        assert abs(a.ri_m - b.ri_m) < 1e-12
        assert abs(a.ri_v - b.ri_v) < 1e-12

    def test_nonpositive_restored_rejected(self):
        with pytest.raises(ValueError):
            ratio_image_stats(np.ones((4, 4)), np.zeros((4, 4)), looks=1)


class TestCoeffVariation:
    def test_constant_is_zero(self):
        assert coeff_variation(np.full((5, 5), 3.0)) == 0.0

    def test_two_point_closed_form(self):
        # values {0, 2c}: mean c, std c, ratio 1
        u = np.array([[0.0, 4.0], [0.0, 4.0]])
        assert abs(coeff_variation(u) - 1.0) < 1e-12

    def test_scale_invariance(self):
        rng = np.random.default_rng(12)
        u = rng.uniform(1, 10, (16, 16))
        assert abs(coeff_variation(u) - coeff_variation(5.0 * u)) < 1e-12

    def test_zero_mean_rejected(self):
        with pytest.raises(ValueError):
            coeff_variation(np.array([[-1.0, 1.0]]))

    def test_speckle_strength_ordering(self):
        # heavier speckle on a constant scene raises the ratio
        c = np.full((300, 300), 8.0)
        n1 = speckle_field(c.shape, SpeckleConfig(looks=1, seed=21))
        n8 = speckle_field(c.shape, SpeckleConfig(looks=8, seed=21))
        assert coeff_variation(c * n1) > coeff_variation(c * n8)


class TestReport:
    def test_report_fields_and_row(self):
        rng = np.random.default_rng(13)
        clean = rng.uniform(50, 200, (32, 32))
        n = speckle_field(clean.shape, SpeckleConfig(looks=4, seed=5))
        noisy = clean * n
        restored = noisy * 0.9 + clean * 0.1
        rep = compute_report(restored, reference=clean, noisy=noisy, looks=4)
        row = table_row("probe", 4, rep)
        cells = row.split(",")
        assert len(cells) == len(TABLE_HEADER.split(","))
        assert cells[0] == "probe"
        assert int(cells[1]) == 4
        assert abs(float(cells[2]) - rep.psnr) < 1e-4 * abs(rep.psnr)

    def test_header_names(self):
        assert TABLE_HEADER.split(",") == [
            "image", "looks", "psnr", "mssim", "ec", "ri_m", "ri_v", "c_hat"]

    def test_partial_report_blank_cells(self):
        rng = np.random.default_rng(15)
        u = rng.uniform(1, 200, (16, 16))
        rep = compute_report(u)
        assert rep.psnr is None and rep.ri_m is None
        cells = table_row("solo", None, rep).split(",")
        assert cells[1] == "" and cells[2] == ""
        assert float(cells[7]) > 0

    def test_reference_equals_test(self):
        rng = np.random.default_rng(14)
        clean = rng.uniform(50, 200, (32, 32))
        rep = compute_report(clean, reference=clean, noisy=clean, looks=1)
        assert rep.psnr == math.inf
        assert rep.mssim == 1.0
        assert rep.ec == 1.0
        assert rep.ri_m == 1.0 and rep.ri_v == 0.0
