import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gratingstab.errors import InsufficientData, RejectionRateExceeded
from gratingstab.harness import (
    MC_HEADER,
    SWEEP_HEADER,
    GridOverride,
    StabilityRecord,
    envelope,
    fit_exponent,
    fitted_constant,
    grid_rule,
    mc_csv,
    monte_carlo,
    solve_configuration,
    sweep,
    sweep_csv,
)
from gratingstab.modes import PlaneWaveConfig
from gratingstab.random_surface import kl_eigenpairs
from gratingstab.solver import energy_norms
from gratingstab.transform import GratingProfile

TWO_PI = 2 * math.pi
FLAT = GratingProfile.flat(TWO_PI)


def template(b=1.0, theta=0.0):
    return PlaneWaveConfig(2.5, theta, TWO_PI, b)


def synthetic(ks, quotients, b=1.0, eps=0.5):
    out = []
    for k, q in zip(ks, quotients):
        env = envelope(k, b, eps)
        out.append(StabilityRecord(k, 0.0, b, eps, 1.0, q, 0.0, q, env.value, env.branch, 8, 8, 1))
    return out


class TestGridRule:
    def test_values(self):
        assert grid_rule(template()) == (128, 32, 11)

    def test_scaling(self):
        M, P, N = grid_rule(PlaneWaveConfig(19.5, 0.0, TWO_PI, 2.0))
        assert N == 20 + 8
        assert M == 256 and M >= 4 * (2 * N + 1)
        assert P == math.ceil(80 * 19.5 * 2 / TWO_PI)

    def test_override(self):
        rule = GridOverride(M=64, P=200)
        assert rule(template()) == (64, 200, 11)


class TestEnvelope:
    def test_reduced_branch(self):
        env = envelope(4, 2, 0.5)
        assert env.value == pytest.approx(256)
        assert env.branch == "reduced" and env.reduced

    def test_resonant_branch(self):
        env = envelope(4, 1, 1e-4)
        assert env.value == pytest.approx(1600)
        assert env.branch == "resonant" and not env.reduced

    def test_crossover(self):
        k = 7.3
        assert 1 * k * k / math.sqrt(1 / k) == pytest.approx(k**2.5, rel=1e-14)
        assert envelope(k, 1.0, 1 / k).value == pytest.approx(k**2.5, rel=1e-14)

    def test_requires_positive_eps(self):
        with pytest.raises(ValueError):
            envelope(2.0, 1.0, 0.0)

    @settings(max_examples=100, deadline=None)
    @given(
        k=st.floats(0.5, 50), b=st.floats(0.2, 5), eps=st.floats(1e-4, 2),
        dk=st.floats(0, 5), db=st.floats(0, 2), de=st.floats(0, 1),
    )
    def test_monotone(self, k, b, eps, dk, db, de):
        base = envelope(k, b, eps).value
        assert envelope(k + dk, b, eps).value >= base
        assert envelope(k, b + db, eps).value >= base
        assert envelope(k, b, eps + de).value <= base


class TestSweep:
    def test_flat_records_against_images(self):
        records = sweep(template(), FLAT, [2.3, 2.5, 2.7], 0.2)
        assert [r.k for r in records] == [2.3, 2.5, 2.7]
        for r in records:
            beta, b = r.k, r.b
            l2 = TWO_PI * (2 * b - math.sin(2 * beta * b) / beta)
            grad = TWO_PI * (2 * beta * beta * b + beta * math.sin(2 * beta * b))
            # default sweep grids are coarse: O(h^2) with h = b/30
            assert r.l2_norm**2 == pytest.approx(l2, rel=5e-3)
            assert r.grad_norm**2 == pytest.approx(grad, rel=5e-3)
            assert r.quotient > 0 and r.eps >= 0.2
            assert r.quotient == pytest.approx((r.grad_norm + r.k * r.l2_norm) / r.g_norm)

    def test_resonant_skipped(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert sweep(template(), FLAT, [3.0], 0.2) == []
        assert "k=3.0" in caplog.text

    def test_solver_errors_captured(self, caplog):
        steep = GratingProfile.sinusoid(TWO_PI, 0.15)
        with caplog.at_level(logging.ERROR):
            assert sweep(template(), steep, [2.5], 0.2) == []
        assert "ProfileTooSteep" in caplog.text

    def test_ascending(self):
        with pytest.raises(ValueError):
            sweep(template(), FLAT, [2.5, 2.3], 0.2)

    def test_fitted_constant_bounds_sweep(self):
        records = sweep(template(), FLAT, [2.3, 2.5, 3.5, 4.5], 0.2)
        c_fit = fitted_constant(records)
        assert all(r.quotient <= c_fit * r.envelope * (1 + 1e-15) for r in records)

    def test_workers_do_not_change_records(self):
        ks = [2.3, 2.5, 3.5, 4.4]
        serial = sweep(template(b=2.0), GratingProfile.sinusoid(TWO_PI, 0.1), ks, 0.2, workers=1)
        pooled = sweep(template(b=2.0), GratingProfile.sinusoid(TWO_PI, 0.1), ks, 0.2, workers=2)
        assert sweep_csv(serial) == sweep_csv(pooled)

    def test_csv(self):
        text = sweep_csv(sweep(template(), FLAT, [2.5], 0.2))
        lines = text.splitlines()
        assert lines[0] == ",".join(SWEEP_HEADER)
        assert lines[0] == "k,theta,b,eps,g_norm,grad_norm,l2_norm,quotient,envelope,branch,M,P,N"
        assert len(lines) == 2 and lines[1].endswith(",128,32,11")

    def test_empty_csv_is_header_only(self):
        assert sweep_csv([]) == ",".join(SWEEP_HEADER) + "\n"


class TestFit:
    def test_power_law(self):
        ks = np.linspace(3, 20, 9)
        slope, stderr = fit_exponent(synthetic(ks, ks**2))
        assert slope == pytest.approx(2.0, abs=1e-12)
        assert stderr < 1e-10

    def test_constant(self):
        slope, _ = fit_exponent(synthetic(np.linspace(3, 20, 9), [7.0] * 9))
        assert slope == pytest.approx(0.0, abs=1e-12)

    def test_too_few(self):
        with pytest.raises(InsufficientData):
            fit_exponent(synthetic([3, 4, 5, 6], [1, 2, 3, 4]))

    def test_only_reduced_branch_counts(self):
        ks = [3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
        records = synthetic(ks, [1.0] * 6, eps=1e-3)
        with pytest.raises(InsufficientData):
            fit_exponent(records)


class TestMonteCarlo:
    def setup_method(self):
        self.config = PlaneWaveConfig(4.5, 0.0, TWO_PI, 1.0)

    def test_degenerate_ensemble(self):
        model = kl_eigenpairs(0.0, 0.5, TWO_PI)
        summary = monte_carlo(model, self.config, 3, master_seed=9)
        field, _ = solve_configuration(self.config, FLAT)
        grad, l2 = energy_norms(field)
        deterministic = (grad + 4.5 * l2) / summary.g_norm
        assert abs(summary.stochastic_quotient - deterministic) <= 1e-12
        assert summary.ci95 == 0 and summary.n_rejected == 0

    def test_summary_fields(self):
        model = kl_eigenpairs(0.02, 0.5, TWO_PI)
        s = monte_carlo(model, self.config, 6, master_seed=1)
        q = s.accepted_quotients()
        assert q.size == 6 and np.all(q > 0)
        assert s.ci95 > 0
        grads = np.array([x.grad_sq for x in s.samples])
        assert s.mean_sq_grad == pytest.approx(grads.mean(), rel=1e-14)
        assert s.stochastic_quotient == pytest.approx(
            (math.sqrt(s.mean_sq_grad) + math.sqrt(s.mean_sq_l2)) / s.g_norm
        )

    def test_reproducible_and_worker_independent(self):
        model = kl_eigenpairs(0.02, 0.5, TWO_PI)
        a = monte_carlo(model, self.config, 4, master_seed=5, workers=1)
        b = monte_carlo(model, self.config, 4, master_seed=5, workers=2)
        assert mc_csv(a) == mc_csv(b)
        c = monte_carlo(model, self.config, 4, master_seed=6)
        assert mc_csv(a) != mc_csv(c)

    def test_rejection_rate(self):
        model = kl_eigenpairs(5.0, 0.5, TWO_PI)
        with pytest.raises(RejectionRateExceeded):
            monte_carlo(model, self.config, 10, master_seed=0)

    def test_rejections_recorded(self):
        model = kl_eigenpairs(0.03, 0.5, TWO_PI)
        s = monte_carlo(model, self.config, 20, master_seed=2)
        rejected = [x for x in s.samples if not x.accepted]
        assert len(rejected) == s.n_rejected
        assert s.n_rejected / s.n_samples <= 0.2
        assert sum(x.accepted for x in s.samples) == 20

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            monte_carlo(kl_eigenpairs(0.0, 0.5, TWO_PI), self.config, 1, 0)

    def test_admissibility(self):
        resonant = PlaneWaveConfig(3.0, 0.0, TWO_PI, 1.0)
        with pytest.raises(ValueError):
            monte_carlo(kl_eigenpairs(0.0, 0.5, TWO_PI), resonant, 2, 0, eps_min=0.1)

    def test_csv(self):
        s = monte_carlo(kl_eigenpairs(0.0, 0.5, TWO_PI), self.config, 2, master_seed=3)
        lines = mc_csv(s).splitlines()
        assert lines[0] == ",".join(MC_HEADER) == "sample,seed,quotient,accepted"
        assert [line.split(",")[0] for line in lines[1:]] == ["0", "1"]
