import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import gratingstab.random_surface as rs
from gratingstab.errors import NonPositiveEigenvalue
from gratingstab.random_surface import (
    TRUNCATION_RATIO,
    draw_xi,
    kl_eigenpairs,
    kl_eigenvalues,
    sample_seed,
    sample_surface,
    screen_sample,
)
from gratingstab.transform import GratingProfile

TWO_PI = 2 * math.pi


def gaussian_fourier(sigma, ell, Lambda, j):
    """Fourier transform of sigma^2 exp(-t^2/ell^2) at 2 pi j / Lambda."""
    return sigma**2 * ell * math.sqrt(math.pi) * np.exp(-((math.pi * j * ell / Lambda) ** 2))


class TestEigenvalues:
    def test_zeroth_against_gaussian_integral(self):
        m = kl_eigenpairs(1.0, 0.3, TWO_PI)
        assert m.lambdas[0] == pytest.approx(0.3 * math.sqrt(math.pi), rel=1e-12)
        assert m.lambdas[0] == pytest.approx(0.5317, abs=1e-4)

    @pytest.mark.parametrize("ell, Lambda", [(0.3, TWO_PI), (0.5, TWO_PI), (0.4, 2.0)])
    def test_against_closed_form(self, ell, Lambda):
        lam = kl_eigenvalues(1.3, ell, Lambda, 40)
        exact = gaussian_fourier(1.3, ell, Lambda, np.arange(41))
        # image sum of a wide kernel on a short period adds e^{-(Lambda/ell)^2} terms
        np.testing.assert_allclose(lam, exact, rtol=0, atol=1e-12 + 2 * math.exp(-((Lambda / ell) ** 2)) * Lambda)

    def test_quadrature_doubling(self):
        n = rs.default_quadrature_nodes(0.3, TWO_PI)
        a = kl_eigenvalues(1.0, 0.3, TWO_PI, 5, n)
        b = kl_eigenvalues(1.0, 0.3, TWO_PI, 5, 2 * n)
        assert abs(a[0] - b[0]) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(sigma=st.floats(0.0, 3.0), ell=st.floats(0.05, 1.5), J=st.integers(1, 60))
    def test_nonnegative_nonincreasing_and_trace(self, sigma, ell, J):
        lam = kl_eigenvalues(sigma, ell, TWO_PI, J)
        assert np.all(lam >= 0)
        assert np.all(np.diff(lam) <= 0)
        trace = lam[0] + 2 * lam[1:].sum()
        # full-spectrum trace of the periodised kernel is Lambda * c_per(0)
        c0 = float(rs.periodized_covariance(0.0, sigma, ell, TWO_PI))
        assert trace <= c0 * TWO_PI * (1 + 1e-12) + 1e-15
        if ell <= TWO_PI / 8:
            assert trace <= sigma**2 * TWO_PI * (1 + 1e-12) + 1e-15

    def test_default_truncation(self):
        m = kl_eigenpairs(1.0, 0.3, TWO_PI)
        assert m.lambdas[m.J] / m.lambdas[0] < TRUNCATION_RATIO
        assert m.lambdas[m.J - 1] / m.lambdas[0] >= TRUNCATION_RATIO

    def test_truncation_independent_of_sigma(self):
        assert kl_eigenpairs(0.0, 0.5, TWO_PI).J == kl_eigenpairs(2.0, 0.5, TWO_PI).J

    def test_negative_eigenvalue_detected(self, monkeypatch):
        def box(tau, sigma, ell, Lambda):
            return np.where(np.abs(tau) < ell, sigma**2, 0.0)

        monkeypatch.setattr(rs, "periodized_covariance", box)
        with pytest.raises(NonPositiveEigenvalue):
            kl_eigenvalues(1.0, 0.5, TWO_PI, 20)

    @pytest.mark.parametrize("ell", [0.0, -0.1, TWO_PI / 4])
    def test_correlation_length_bounds(self, ell):
        with pytest.raises(ValueError):
            kl_eigenpairs(1.0, ell, TWO_PI)

    def test_rejects_samples_mean(self):
        with pytest.raises(ValueError):
            kl_eigenpairs(1.0, 0.3, TWO_PI, mean=GratingProfile.from_samples(TWO_PI, [0, 1]))

    def test_truncation_at_least_one(self):
        with pytest.raises(ValueError):
            kl_eigenpairs(1.0, 0.3, TWO_PI, J=0)


class TestSampling:
    def setup_method(self):
        self.mean = GratingProfile.trig(TWO_PI, 0.05, [0.02], [0.01])
        self.model = kl_eigenpairs(0.04, 0.5, TWO_PI, mean=self.mean)

    def test_zero_xi_gives_mean(self):
        p = sample_surface(self.model, np.zeros(self.model.n_xi))
        x = np.linspace(0, TWO_PI, 50)
        np.testing.assert_array_equal(p(x), self.mean(x))

    def test_constant_mode(self):
        xi = np.zeros(self.model.n_xi)
        xi[0] = 1.0
        p = sample_surface(self.model, xi)
        x = np.linspace(0, TWO_PI, 50)
        offset = math.sqrt(self.model.lambdas[0] / TWO_PI)
        np.testing.assert_allclose(p(x) - self.mean(x), offset, rtol=1e-14)

    def test_layout(self):
        xi = np.zeros(self.model.n_xi)
        xi[3], xi[4] = 1.0, -2.0  # j = 2 sine, j = 2 cosine
        p = sample_surface(self.model, xi)
        x = np.linspace(0, TWO_PI, 40)
        amp = math.sqrt(2 * self.model.lambdas[2] / TWO_PI)
        expected = self.mean(x) + amp * (np.sin(2 * x) - 2 * np.cos(2 * x))
        np.testing.assert_allclose(p(x), expected, atol=1e-15)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            sample_surface(self.model, np.zeros(self.model.n_xi + 1))

    def test_deterministic(self):
        a = sample_surface(self.model, draw_xi(self.model, sample_seed(7, 3)))
        b = sample_surface(self.model, draw_xi(self.model, sample_seed(7, 3)))
        assert a.a.tobytes() == b.a.tobytes() and a.b.tobytes() == b.b.tobytes()

    def test_seeds_distinct(self):
        seeds = {sample_seed(1, i, t) for i in range(50) for t in range(3)}
        assert len(seeds) == 150
        assert sample_seed(1, 0) != sample_seed(2, 0)

    def test_mean_and_pointwise_variance(self):
        n = 4000
        x = np.linspace(0, TWO_PI, 9)
        vals = np.array([
            sample_surface(self.model, draw_xi(self.model, sample_seed(11, i)))(x) for i in range(n)
        ])
        se = vals.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(vals.mean(axis=0) - self.mean(x)) <= 3 * se)
        var = self.model.point_variance()
        assert var == pytest.approx(0.04**2, rel=1e-6)
        # chi-square spread of a variance estimate
        assert vals[:, 0].var(ddof=1) == pytest.approx(var, rel=4 * math.sqrt(2 / n))

    def test_lipschitz_bound(self):
        lam = self.model.lambdas
        q = 2 * math.pi * np.arange(1, self.model.J + 1) / TWO_PI
        x = np.linspace(0, TWO_PI, 4001)
        for i in range(20):
            xi = draw_xi(self.model, sample_seed(5, i))
            p = sample_surface(self.model, xi)
            bound = math.sqrt(2 / TWO_PI) * np.sum(q * np.sqrt(lam[1:]) * (np.abs(xi[1::2]) + np.abs(xi[2::2])))
            bound += self.mean.lipschitz_bound()
            assert np.max(np.abs(p.derivative(x))) <= bound * (1 + 1e-12)


class TestScreening:
    def test_flat_accepted(self):
        assert screen_sample(GratingProfile.flat(TWO_PI), 1.0).accepted

    def test_height_rejected(self):
        verdict = screen_sample(GratingProfile.flat(TWO_PI, 0.5), 1.0)
        assert not verdict.accepted
        assert verdict.reason.startswith("height")

    def test_margin_rejected(self):
        verdict = screen_sample(GratingProfile.sinusoid(TWO_PI, 0.1), 1.0)
        assert not verdict.accepted
        assert verdict.reason.startswith("injectivity")

    @pytest.mark.parametrize("b", [1.0, 2.0])
    def test_rejection_rate_matches_height_oracle(self, b):
        """Screening agrees with a direct sup test on a fine grid."""
        model = kl_eigenpairs(0.05, 0.5, TWO_PI)
        x = np.arange(8192) * (TWO_PI / 8192)
        threshold = min(b / 2, 1.0) / 6
        n, rejected, disagreements = 10_000, 0, 0
        for i in range(n):
            p = sample_surface(model, draw_xi(model, sample_seed(3, i)))
            verdict = screen_sample(p, b)
            rejected += not verdict.accepted
            if i < 1000:
                oracle = np.max(np.abs(p(x))) <= threshold
                disagreements += oracle != verdict.accepted
        print(f"b={b}: {rejected} of {n} draws rejected")
        assert disagreements <= 1
