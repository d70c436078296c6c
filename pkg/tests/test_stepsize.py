import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aistosqp import Schedule, StepPolicy, draw_stepsize, envelope, validate_schedule
from aistosqp.errors import ConfigurationError
from aistosqp.stepsize import POLICIES


class TestEnvelope:
    def test_grid_point(self):
        beta, chi, eta, phi = envelope(Schedule(2, 0.5, 2), 100)
        assert (beta, chi, eta, phi) == pytest.approx((0.2, 0.04, 0.24, 0.22), abs=1e-15)

    def test_first_iteration(self):
        beta, chi, eta, _ = envelope(Schedule(2, 0.6, 2), 1)
        assert (beta, chi, eta) == (2.0, 4.0, 6.0)

    def test_zero_uses_one(self):
        s = Schedule(2, 0.6, 2)
        assert envelope(s, 0) == envelope(s, 1)

    def test_negative_t(self):
        with pytest.raises(ConfigurationError):
            envelope(Schedule(), -1)

    @given(st.floats(0.1, 10), st.floats(0.05, 1.0), st.floats(0.5, 4), st.integers(0, 10**7))
    def test_chi_is_power_of_beta(self, c1, c2, c3, t):
        s = Schedule(c1, c2, c3)
        beta, chi, eta, phi = envelope(s, t)
        assert beta > 0 and chi > 0
        assert chi == beta**c3
        assert eta == beta + chi
        assert phi == beta + 0.5 * chi

    def test_gap_vanishes_relative_to_beta(self):
        s = Schedule(2, 0.6, 1.5)
        ratios = [s.chi(t) / s.beta(t) for t in (10, 10**3, 10**5, 10**7)]
        assert all(a > b for a, b in zip(ratios, ratios[1:]))
        # chi / beta = beta**(c3 - 1) = sqrt(2 / 10**4.2) at t = 10**7
        assert ratios[-1] == pytest.approx(math.sqrt(2 * 10**-4.2), rel=1e-12)

    def test_infinite_c3_closes_gap(self):
        beta, chi, eta, _ = envelope(Schedule(2, 0.6, math.inf), 10)
        assert chi == 0.0 and eta == beta

    @pytest.mark.parametrize("kw", [dict(c1=0), dict(c2=0), dict(c2=1.5), dict(c3=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            Schedule(**kw)


class TestLimits:
    def test_limit_constants(self):
        s = Schedule(2, 1.0, 2)
        assert s.beta_lim == -1.0 and s.beta_tilde == 2.0 and s.chi_lim == -2.0
        assert s.ratio == -0.5
        s = Schedule(2, 0.7, 2)
        assert math.isinf(s.beta_tilde) and s.ratio == 0.0

    @pytest.mark.parametrize("c2", [0.5, 0.7, 1.0])
    def test_raabe_limit(self, c2):
        s = Schedule(2, c2, 2)
        t = 10**6
        assert t * (1 - s.beta(t - 1) / s.beta(t)) == pytest.approx(s.beta_lim, abs=1e-3)
        assert t * (1 - s.chi(t - 1) / s.chi(t)) == pytest.approx(s.chi_lim, abs=1e-2)

    def test_summability_split(self):
        s = Schedule(2, 0.7, 2)
        t = np.arange(1, 10**6 + 1, dtype=float)
        beta = s.c1 / t**s.c2
        chi = beta**s.c3
        eta = beta + chi
        # share of the partial sum contributed by the last 90% of terms
        tail = slice(10**5, None)
        assert beta[tail].sum() / beta.sum() > 0.3          # still growing: diverges
        assert (eta**2)[tail].sum() / (eta**2).sum() < 0.01  # settled: converges
        assert chi[tail].sum() / chi.sum() < 0.01


class TestDraw:
    def test_lower(self):
        assert draw_stepsize(StepPolicy("deterministic_lower"), 0.2, 0.24, None) == 0.2

    def test_midpoint(self):
        assert draw_stepsize(StepPolicy("deterministic_midpoint"), 0.2, 0.24, None) == pytest.approx(0.22)

    def test_uniform_moments(self):
        rng = np.random.default_rng(0)
        beta, eta = 0.2, 0.24
        draws = np.array([draw_stepsize(StepPolicy(), beta, eta, rng) for _ in range(100_000)])
        assert draws.min() >= beta and draws.max() <= eta
        se = (eta - beta) / math.sqrt(12 * draws.size)
        assert abs(draws.mean() - 0.22) <= 4 * se

    @pytest.mark.parametrize("kind", POLICIES)
    def test_degenerate_interval(self, kind):
        rng = np.random.default_rng(0)
        assert draw_stepsize(StepPolicy(kind), 0.3, 0.3, rng) == 0.3

    @given(st.floats(1e-6, 10), st.floats(0, 10), st.sampled_from(POLICIES), st.integers(0, 2**32 - 1))
    def test_sandwich(self, beta, gap, kind, seed):
        eta = beta + gap
        a = draw_stepsize(StepPolicy(kind), beta, eta, np.random.default_rng(seed))
        assert beta <= a <= eta

    def test_bad_interval(self):
        with pytest.raises(ConfigurationError):
            draw_stepsize(StepPolicy(), 0.3, 0.2, np.random.default_rng(0))

    def test_unknown_policy(self):
        with pytest.raises(ConfigurationError):
            StepPolicy("armijo")


class TestRegimes:
    @pytest.mark.parametrize("rho", [0.0, 0.5, 0.99])
    def test_paper_normality_schedule(self, rho):
        r = validate_schedule(Schedule(2, 0.7, 2), rho, 50)
        assert r.global_convergence and r.local_rate and r.normality

    def test_square_root_schedule_outside(self):
        r = validate_schedule(Schedule(2, 0.5, 2), 0.5, 50)
        assert not r.global_convergence and not r.local_rate and not r.normality
        assert r.notes

    def test_harmonic_rate(self):
        r = validate_schedule(Schedule(10, 1.0, 2), 0.0, 50)
        assert r.local_rate
        # c1 = 10 > (c3 - 0.5) = 1.5 as well
        assert r.normality

    def test_harmonic_small_c1(self):
        r = validate_schedule(Schedule(1.2, 1.0, 2), 0.0, 50)
        assert r.global_convergence and not r.local_rate

    def test_contraction_enters(self):
        # 1 - rho^tau = 0.5 doubles the c1 threshold
        rho = 0.5 ** (1 / 10)
        assert not validate_schedule(Schedule(2.5, 1.0, 2), rho, 10).local_rate
        assert validate_schedule(Schedule(3.5, 1.0, 2), rho, 10).local_rate

    def test_omega_term(self):
        # omega = -2 makes (0.5 - omega) = 2.5 the binding term
        s = Schedule(2.0, 1.0, 2)
        assert validate_schedule(s, 0.0, 50).normality
        assert not validate_schedule(s, 0.0, 50, omega=-2.0).normality

    def test_bad_rho(self):
        with pytest.raises(ConfigurationError):
            validate_schedule(Schedule(), 1.0, 5)
