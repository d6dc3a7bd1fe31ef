import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from subsketch.core import RngStream
from subsketch.sketches import (
    EvenMomentSketch,
    GramSketch,
    LewisWeightsError,
    StableSketch,
    build_sampling_sketch,
    compute_lewis_weights,
    lower_median,
    monomial_exponents,
    sample_stable,
    size_bits,
    stable_median_scale,
)


def _abs_stable_cdf(m, p):
    """P(|X| <= m) for exp(-|t|^p) by Fourier inversion."""
    head, _ = integrate.quad(lambda t: math.sin(m * t) * math.exp(-(t**p)) / t, 0, 1, epsabs=1e-13, limit=200)
    tail, _ = integrate.quad(lambda t: math.exp(-(t**p)) / t, 1, np.inf, weight="sin", wvar=m)
    return 2 / math.pi * (head + tail)


@pytest.mark.parametrize("p", [0.7, 1.0, 1.3, 1.5, 1.8, 2.0])
def test_median_scale_against_fourier_inversion(p):
    oracle = optimize.brentq(lambda m: _abs_stable_cdf(m, p) - 0.5, 0.05, 20, xtol=1e-13)
    assert stable_median_scale(p) == pytest.approx(oracle, rel=1e-7)


def test_median_scale_closed_forms():
    assert stable_median_scale(1.0) == 1.0
    assert stable_median_scale(2.0) == pytest.approx(math.sqrt(2) * stats.norm.ppf(0.75))


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_stable_samples_have_the_right_median(p):
    x = sample_stable(p, 200_000, np.random.default_rng(7))
    assert np.median(np.abs(x)) == pytest.approx(stable_median_scale(p), rel=0.02)


def test_gaussian_case_has_variance_two():
    x = sample_stable(2.0, 200_000, np.random.default_rng(1))
    assert x.var() == pytest.approx(2.0, rel=0.02)


def test_lower_median():
    assert lower_median(np.array([3.0, 1.0, 2.0, 4.0])) == 2.0


class TestExactSketches:
    def test_gram(self):
        g = np.random.default_rng(0)
        A = g.standard_normal((50, 6))
        sk = GramSketch(A)
        for _ in range(20):
            x = g.standard_normal(6)
            assert sk.query(x) == pytest.approx(np.sum((A @ x) ** 2), rel=1e-12)
        assert size_bits(sk) == 21 * 64

    def test_monomial_order(self):
        assert monomial_exponents(2, 2) == [(2, 0), (1, 1), (0, 2)]
        assert len(monomial_exponents(4, 3)) == math.comb(6, 3)

    def test_small_even_case(self):
        sk = EvenMomentSketch([[1.0, 1.0]], 4)
        assert sk.query([1.0, 2.0]) == pytest.approx(81.0)

    @pytest.mark.parametrize("p", [2, 4, 6])
    def test_even_moment_matches_oracle(self, p):
        g = np.random.default_rng(p)
        A = g.integers(-3, 4, size=(40, 4)).astype(float)
        sk = EvenMomentSketch(A, p)
        for _ in range(50):
            x = g.standard_normal(4)
            exact = np.sum(np.abs(A @ x) ** p)
            assert sk.query(x) == pytest.approx(exact, rel=1e-9)

    def test_even_moment_size(self):
        sk = EvenMomentSketch(np.ones((3, 4)), 4)
        assert sk.m == 10 and sk.stored_entries() == 55
        assert sk.size_bits() == 55 * 64

    def test_even_moment_rejects(self):
        with pytest.raises(ValueError):
            EvenMomentSketch(np.ones((2, 2)), 3)
        with pytest.raises(ValueError):
            EvenMomentSketch(np.ones((2, 200)), 6)


class TestStableSketch:
    def test_rows_and_size(self):
        sk = StableSketch(np.ones((10, 3)), 1.0, 0.2, 0)
        assert sk.rows == 1250
        assert sk.size_bits() == 1250 * 3 * 64

    def test_coverage(self):
        g = np.random.default_rng(11)
        A = g.standard_normal((200, 5))
        hits = 0
        for t in range(100):
            sk = StableSketch(A, 1.5, 0.2, RngStream(t, "cov"))
            x = g.standard_normal(5)
            exact = np.sum(np.abs(A @ x) ** 1.5)
            hits += abs(sk.query(x) - exact) <= 0.2 * exact
        assert hits >= 85

    def test_rejects(self):
        with pytest.raises(ValueError):
            StableSketch(np.ones((2, 2)), 2.5, 0.2, 0)
        with pytest.raises(ValueError):
            StableSketch(np.ones((2, 2)), 1.0, 1.5, 0)


class TestLewis:
    def test_p2_is_leverage(self):
        A = np.random.default_rng(0).standard_normal((80, 5))
        Q, _ = np.linalg.qr(A)
        lw = compute_lewis_weights(A, 2.0)
        assert np.allclose(lw.w, np.sum(Q**2, axis=1), atol=1e-12)
        assert lw.iterations <= 3

    @pytest.mark.parametrize("p", [0.5, 1.0, 1.5, 3.0])
    def test_fixed_point(self, p):
        A = np.random.default_rng(1).standard_normal((60, 4)) * np.linspace(0.1, 3, 60)[:, None]
        lw = compute_lewis_weights(A, p)
        W = lw.w ** (1 - 2 / p)
        G = np.linalg.inv(A.T @ (A * W[:, None]))
        again = np.einsum("ij,jk,ik->i", A, G, A) ** (p / 2)
        assert np.max(np.abs(again - lw.w)) <= 1e-9
        assert lw.w.sum() == pytest.approx(4.0, abs=1e-8)

    def test_rejects(self):
        with pytest.raises(ValueError):
            compute_lewis_weights(np.ones((5, 2)), 1.0)
        with pytest.raises(ValueError):
            compute_lewis_weights(np.eye(3), 4.0)

    def test_nonconvergence_is_signalled(self):
        A = np.random.default_rng(2).standard_normal((50, 3))
        with pytest.raises(LewisWeightsError) as info:
            compute_lewis_weights(A, 1.0, tol=1e-300, max_iter=3)
        assert info.value.residual > 0


def test_sampling_sketch_is_unbiased():
    g = np.random.default_rng(3)
    A = g.standard_normal((300, 4))
    x = g.standard_normal(4)
    lw = compute_lewis_weights(A, 1.0)
    exact = np.sum(np.abs(A @ x))
    est = [build_sampling_sketch(A, 1.0, 100, RngStream(t, "samp"), lw).query(x) for t in range(400)]
    assert np.mean(est) == pytest.approx(exact, rel=0.02)
    assert build_sampling_sketch(A, 1.0, 100, 0, lw).stored_entries() == 400


def test_documented_sizes_d10():
    A = np.random.default_rng(0).standard_normal((30, 10))
    assert GramSketch(A).size_bits() == 3520
    sk = StableSketch(A, 1.0, 0.5, 0, row_constant=25)
    assert sk.rows == 100 and sk.stored_entries() == 1000
