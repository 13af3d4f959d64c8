import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specklediff.speckle import (SpeckleConfig, energy_d1, energy_d2,
                                 energy_d3, nakagami_mean, prox_idiv,
                                 sample_speckle, speckle_field)


def golden_section_prox(u_tilde, f, lam, tol=1e-9):
    """Independent 1-D minimizer of (u-ut)^2/2 + lam (u^2 - 2 f^2 log u)."""

    def obj(u):
        return 0.5 * (u - u_tilde) ** 2 + lam * (u * u - 2 * f * f * math.log(u))

    lo = 1e-12
    hi = abs(u_tilde) + 3.0 * f + 10.0
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = obj(c), obj(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = obj(d)
    return 0.5 * (a + b)


class TestSampling:
    def test_zero_image_stays_zero(self):
        pair = sample_speckle(np.zeros((5, 5)), SpeckleConfig(looks=3, seed=1))
        assert np.all(pair.noisy == 0)

    def test_negative_input_rejected(self):
        with pytest.raises(ValueError):
            sample_speckle(np.full((3, 3), -1.0), SpeckleConfig(looks=1, seed=0))

    def test_determinism_bit_identical(self):
        u = np.full((32, 32), 5.0)
        cfg = SpeckleConfig(looks=4, seed=123)
        a = sample_speckle(u, cfg).noisy
        b = sample_speckle(u, cfg).noisy
        np.testing.assert_array_equal(a, b)

    def test_positive_where_clean_positive(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(0.5, 10.0, size=(16, 16))
        pair = sample_speckle(u, SpeckleConfig(looks=1, seed=5))
        assert np.all(pair.noisy > 0)

    @pytest.mark.parametrize("looks", [1, 3, 5, 8])
    def test_unit_mean_intensity(self, looks):
        n = speckle_field((1000, 1000), SpeckleConfig(looks=looks, seed=42))
        assert abs(np.mean(n ** 2) - 1.0) < 0.005

    def test_variance_shrinks_with_looks(self):
        n = speckle_field((1000, 1000), SpeckleConfig(looks=64, seed=9))
        v = np.var(n ** 2)
        assert abs(v - 1.0 / 64) < 0.05 / 64

    def test_rayleigh_amplitude_mean(self):
        n = speckle_field((1000, 1000), SpeckleConfig(looks=1, seed=11))
        expect = math.sqrt(math.pi) / 2.0
        assert abs(np.mean(n) - expect) / expect < 0.005
        assert abs(nakagami_mean(1) - expect) < 1e-12

    def test_bad_config(self):
        with pytest.raises(ValueError):
            SpeckleConfig(looks=0, seed=1)
        with pytest.raises(ValueError):
            SpeckleConfig(looks=1, seed=-1)


class TestEnergies:
    def test_d1_substitution(self):
        f = np.array([[2.0]])
        val = energy_d1(f, f, looks=3)
        assert abs(val - 3 * (2 * math.log(2.0) + 1)) < 1e-12

    def test_d1_single_pixel(self):
        assert abs(energy_d1(np.array([[1.0]]), np.array([[1.0]]), 1) - 1.0) < 1e-15

    def test_d1_scalar_oracle(self):
        rng = np.random.default_rng(1)
        u = rng.uniform(0.5, 5, (8, 8))
        f = rng.uniform(0.5, 5, (8, 8))
        expected = sum(4 * (2 * math.log(u[i, j]) + f[i, j] ** 2 / u[i, j] ** 2)
                       for i in range(8) for j in range(8))
        assert abs(energy_d1(u, f, 4) - expected) < 1e-12 * abs(expected)

    def test_d1_domain_error(self):
        with pytest.raises(ValueError):
            energy_d1(np.zeros((2, 2)), np.ones((2, 2)), 1)

    def test_d2_values(self):
        assert abs(energy_d2(np.zeros((1, 1)), np.ones((1, 1)), 1) - 1.0) < 1e-15
        f = np.array([[2.0, 3.0], [0.5, 1.5]])
        w = np.log(f)
        expected = np.sum(2 * (2 * np.log(f) + 1))
        assert abs(energy_d2(w, f, 2) - expected) < 1e-12

    def test_d2_scalar_oracle(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(8, 8))
        f = rng.uniform(0, 5, (8, 8))
        expected = sum(3 * (2 * w[i, j] + f[i, j] ** 2 * math.exp(-2 * w[i, j]))
                       for i in range(8) for j in range(8))
        assert abs(energy_d2(w, f, 3) - expected) < 1e-12 * abs(expected)

    def test_d3_values(self):
        one = np.ones((1, 1))
        assert abs(energy_d3(one, one, 1.0) - 1.0) < 1e-15
        with pytest.raises(ValueError):
            energy_d3(np.zeros((1, 1)), one, 1.0)

    def test_d3_minimized_at_f(self):
        f = 2.5
        du = 1e-6
        for u in (f - du, f + du):
            assert energy_d3(np.array([[u]]), np.array([[f]]), 1.0) \
                >= energy_d3(np.array([[f]]), np.array([[f]]), 1.0)

    def test_d3_scalar_oracle(self):
        rng = np.random.default_rng(3)
        u = rng.uniform(0.5, 5, (8, 8))
        f = rng.uniform(0.5, 5, (8, 8))
        expected = sum(1.7 * (u[i, j] ** 2 - 2 * f[i, j] ** 2 * math.log(u[i, j]))
                       for i in range(8) for j in range(8))
        assert abs(energy_d3(u, f, 1.7) - expected) < 1e-12 * abs(expected)

    def test_d3_convexity_probe(self):
        rng = np.random.default_rng(4)
        f = rng.uniform(0.5, 5, (6, 6))
        for _ in range(50):
            u1 = rng.uniform(0.1, 10, (6, 6))
            u2 = rng.uniform(0.1, 10, (6, 6))
            mid = energy_d3(0.5 * (u1 + u2), f, 1.0)
            avg = 0.5 * (energy_d3(u1, f, 1.0) + energy_d3(u2, f, 1.0))
            assert mid <= avg + 1e-9 * abs(avg)


class TestProx:
    def test_lambda_zero_limit(self):
        ut = np.array([[2.0, 3.0]])
        f = np.array([[1.0, 4.0]])
        out = prox_idiv(ut, f, 1e-12)
        assert np.abs(out - ut).max() < 1e-9

    def test_known_value(self):
        out = prox_idiv(np.array([[2.0]]), np.array([[3.0]]), 1.0)
        expected = (2.0 + math.sqrt(4.0 + 216.0)) / 6.0
        assert abs(out[0, 0] - expected) < 1e-12
        oracle = golden_section_prox(2.0, 3.0, 1.0)
        assert abs(out[0, 0] - oracle) < 1e-6

    def test_lambda_large_limit(self):
        out = prox_idiv(np.array([[-5.0]]), np.array([[2.0]]), 1e8)
        assert abs(out[0, 0] - 2.0) < 1e-3

    def test_invalid_lambda(self):
        with pytest.raises(ValueError):
            prox_idiv(np.ones((2, 2)), np.ones((2, 2)), 0.0)

    def test_positivity_random_triples(self):
        rng = np.random.default_rng(5)
        ut = rng.uniform(-10, 10, (100, 100))
        f = rng.uniform(1e-6, 10, (100, 100))
        for lam in (0.01, 1.0, 10.0):
            assert np.all(prox_idiv(ut, f, lam) > 0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-10, 10), st.floats(0.001, 10), st.floats(0.001, 10))
    def test_matches_numeric_minimizer(self, ut, f, lam):
        closed = prox_idiv(np.array([[ut]]), np.array([[f]]), lam)[0, 0]
        oracle = golden_section_prox(ut, f, lam)
        assert abs(closed - oracle) < 1e-6
