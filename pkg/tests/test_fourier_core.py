import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings
from hypothesis import strategies as st

from knf.fourier_core import (FourierField, antiderivative, convolve, derivative, grid_inverse,
                         grid_points, grid_transform, l2_norm, padded_product, sobolev_norm)

from conftest import random_field


def brute_convolve(u: FourierField, w: FourierField) -> np.ndarray:
    N = u.N
    out = np.zeros(2 * N + 1, dtype=complex)
    for k in range(-N, N + 1):
        out[k + N] = sum(u[j] * w[k - j] for j in range(-N, N + 1))
    return out


class TestFourierField:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            FourierField(np.array([1j, 0, 0]))

    def test_rejects_even_length(self):
        with pytest.raises(ValueError):
            FourierField(np.zeros(4))

    def test_mean_zero_flag_enforced(self):
        with pytest.raises(ValueError):
            FourierField(np.array([0, 1.0, 0]), mean_zero=True)

    def test_from_modes_fills_conjugates(self):
        u = FourierField.from_modes(3, {2: 1 + 2j})
        assert u[-2] == 1 - 2j
        assert u.mean_zero

    def test_resize_round_trip(self, rng):
        u = random_field(6, rng)
        assert np.array_equal(u.resize(10).resize(6).coeffs, u.coeffs)

    def test_json_round_trip(self, rng):
        u = random_field(5, rng)
        assert np.array_equal(FourierField.from_json(u.to_json()).coeffs, u.coeffs)

    def test_out_of_range_mode_is_zero(self, rng):
        assert random_field(3, rng)[7] == 0


class TestNorms:
    def test_zero(self):
        assert l2_norm(FourierField.zeros(4)) == 0

    def test_two_unit_modes(self):
        u = FourierField.from_modes(4, {2: 1.0})
        assert l2_norm(u) == pytest.approx(np.sqrt(2), abs=1e-15)

    def test_l2_matches_direct_sum(self, rng):
        u = random_field(20, rng)
        direct = np.sqrt(sum(abs(u[k]) ** 2 for k in range(-20, 21)))
        assert l2_norm(u) == pytest.approx(direct, rel=1e-13)

    @pytest.mark.parametrize("s", [0.1, 0.25, 0.49])
    def test_homogeneous_single_pair(self, s):
        u = FourierField.from_modes(4, {2: 1.0})
        assert sobolev_norm(u, s, "homogeneous") == pytest.approx(np.sqrt(2) * 2 ** (-s), rel=1e-14)

    @pytest.mark.parametrize("variant", ["homogeneous", "inhomogeneous"])
    def test_sobolev_matches_direct_sum(self, rng, variant):
        u = random_field(16, rng)
        s = 0.3
        w = (lambda k: abs(k)) if variant == "homogeneous" else (lambda k: np.sqrt(1 + k * k))
        direct = np.sqrt(sum(w(k) ** (-2 * s) * abs(u[k]) ** 2 for k in range(-16, 17) if k))
        assert sobolev_norm(u, s, variant) == pytest.approx(direct, rel=1e-13)

    @given(st.floats(0.0, 0.49), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_variants_within_factor(self, s, seed):
        # |k|^2 <= 1 + k^2 <= 2|k|^2 for |k| >= 1
        u = random_field(12, np.random.default_rng(seed))
        hom, inh = sobolev_norm(u, s, "homogeneous"), sobolev_norm(u, s, "inhomogeneous")
        assert 2 ** (-s / 2) * (1 - 1e-12) <= inh / hom <= 1 + 1e-12


class TestConvolution:
    def test_single_modes(self):
        d1 = FourierField.from_modes(5, {1: 1.0})
        d2 = FourierField.from_modes(5, {2: 1.0})
        out = convolve(d1, d2)
        assert out[3] == pytest.approx(1) and out[1] == pytest.approx(1)
        assert out[2] == 0

    def test_zero(self, rng):
        assert not np.any(convolve(random_field(6, rng), FourierField.zeros(6)).coeffs)

    def test_matches_brute_force(self, rng):
        u, w = random_field(9, rng, False), random_field(9, rng, False)
        assert np.allclose(convolve(u, w).coeffs, brute_convolve(u, w), rtol=0, atol=1e-12)

    def test_padded_grid_product_equals_convolution(self, rng):
        u, w = random_field(9, rng), random_field(9, rng)
        assert np.allclose(padded_product(u, w).coeffs, convolve(u, w).coeffs, atol=1e-12)


class TestCalculus:
    def test_antiderivative_of_sine(self):
        sin = FourierField.from_modes(4, {1: 1 / 2j})
        neg_cos = FourierField.from_modes(4, {1: -0.5})
        assert np.allclose(antiderivative(sin).coeffs, neg_cos.coeffs, atol=1e-15)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_inverse_pair(self, seed):
        u = random_field(10, np.random.default_rng(seed))
        assert np.allclose(derivative(antiderivative(u)).coeffs, u.coeffs, atol=1e-13)

    def test_antiderivative_against_quadrature(self, rng):
        # F(x) = int_0^x u - mean, with mean = (1/2pi) int_0^2pi (2pi - y) u(y) dy
        u = random_field(6, rng)
        k = np.arange(1, 7)
        pos = u.positive[1:]

        def f(y):
            return 2 * np.real(np.sum(pos * np.exp(1j * k * y)))

        opts = dict(epsabs=1e-13, epsrel=1e-12, limit=200)
        mean = quad(lambda y: (2 * np.pi - y) * f(y), 0, 2 * np.pi, **opts)[0] / (2 * np.pi)
        x = grid_points(16)
        ref = np.array([quad(f, 0, xi, **opts)[0] for xi in x]) - mean
        assert np.max(np.abs(grid_transform(antiderivative(u), 16) - ref)) < 1e-10

    def test_antiderivative_against_spectral_quadrature(self, rng):
        u = random_field(6, rng)
        x = grid_points(64)
        got = grid_transform(antiderivative(u), 64)
        # exact integral of each mode, summed pointwise
        k = np.arange(1, 7)
        ref = 2 * np.real((u.positive[1:] / (1j * k))[None, :] * np.exp(1j * np.outer(x, k))).sum(1)
        assert np.max(np.abs(got - ref)) < 1e-10


class TestGrid:
    @given(st.integers(0, 2**32 - 1), st.integers(2, 12))
    @settings(max_examples=30, deadline=None)
    def test_round_trip(self, seed, N):
        u = random_field(N, np.random.default_rng(seed), False)
        back = grid_inverse(grid_transform(u, 2 * N + 2), N)
        assert np.allclose(back.coeffs, u.coeffs, atol=1e-13)

    def test_cos3x_samples(self):
        u = FourierField.from_modes(5, {3: 0.5})
        x = grid_points(32)
        assert np.max(np.abs(grid_transform(u, 32) - np.cos(3 * x))) < 1e-14

    def test_grid_is_two_pi_periodic(self):
        x = grid_points(8)
        assert x[0] == 0 and x[1] == pytest.approx(np.pi / 4)
