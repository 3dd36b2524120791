"""Schedule invariants and frozen example values.

Derived constants below were computed from independent oracles (numeric
quadrature of beta, direct algebra on the log-linear formulas) and frozen.
"""

import numpy as np
import pytest
from scipy.integrate import quad

from polydiff.errors import ConfigError, DomainError
from polydiff.schedules import (
    ContinuousSchedule,
    DiscreteSchedule,
    default_schedules,
    preset,
)

TAB = preset("tabular-vp")
TXT = preset("textimage-vp")
MASK = preset("loglinear-mask")


class TestBeta:
    def test_linear_endpoints(self):
        assert TAB.beta(0.0) == pytest.approx(0.1)
        assert TAB.beta(1.0) == pytest.approx(20.0)

    def test_scaled_sqrt_at_zero(self):
        # 500 * (sqrt(0.00085))^2 = 0.425
        assert TXT.beta(0.0) == pytest.approx(0.425, abs=1e-12)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            TAB.beta(-0.01)
        with pytest.raises(DomainError):
            TAB.beta(1.01)

    def test_positive_on_unit_interval(self):
        t = np.linspace(0.0, 1.0, 257)
        assert np.all(TAB.beta(t) > 0)
        assert np.all(TXT.beta(t) > 0)


class TestBetaIntegral:
    @pytest.mark.parametrize("sched", [TAB, TXT])
    def test_matches_quadrature(self, sched):
        # Independent oracle: adaptive quadrature of beta over [0, t].
        for t in np.linspace(0.05, 1.0, 20):
            oracle, _ = quad(lambda u: sched.beta(u), 0.0, t, epsabs=1e-12)
            closed = sched.beta_integral(t)
            assert closed == pytest.approx(oracle, rel=1e-8)

    def test_strictly_increasing_from_zero(self):
        t = np.linspace(0.0, 1.0, 400)
        b = TAB.beta_integral(t)
        assert b[0] == 0.0
        assert np.all(np.diff(b) > 0)


class TestVpCoeffs:
    def test_identity_at_zero(self):
        assert TAB.vp_coeffs(0.0) == (1.0, 0.0)

    def test_frozen_values_linear(self):
        # B(1) = (0.1 + 20)/2 = 10.05 -> mean = e^{-10.05}
        mean1, _ = TAB.vp_coeffs(1.0)
        assert mean1 == pytest.approx(np.exp(-10.05), rel=1e-12)
        assert mean1 == pytest.approx(4.3e-5, rel=2e-2)
        # B(0.5) = 0.1*0.5 + 19.9*0.125 = 2.5375 (oracle: quadrature above)
        mean, std = TAB.vp_coeffs(0.5)
        assert mean == pytest.approx(np.exp(-2.5375), rel=1e-12)
        assert mean == pytest.approx(0.0790638, abs=1e-6)
        assert std == pytest.approx(0.9968696, abs=1e-6)

    def test_variance_preserving_identity(self):
        rng = np.random.default_rng(0)
        t = rng.uniform(0.0, 1.0, size=1000)
        for sched in (TAB, TXT):
            mean, std = sched.vp_coeffs(t)
            np.testing.assert_allclose(mean**2 + std**2, 1.0, atol=1e-12)


class TestDiscCoeffs:
    def test_at_zero(self):
        sig, sbar, surv = MASK.coeffs(0.0)
        assert sig == pytest.approx(0.99999)
        assert sbar == 0.0
        assert surv == 1.0

    def test_frozen_midpoint(self):
        # Oracle: -ln(1 - (1 - 1e-5) * 0.5) = 0.6931372 exactly.
        _, sbar, surv = MASK.coeffs(0.5)
        assert sbar == pytest.approx(-np.log(1.0 - (1.0 - 1e-5) * 0.5), rel=1e-12)
        assert sbar == pytest.approx(0.6931372, abs=1e-6)
        assert surv == pytest.approx(0.500005, abs=1e-9)

    def test_absorbing_limit(self):
        zero_floor = DiscreteSchedule(delta=0.0)
        assert zero_floor.survival(1.0) == 0.0
        # capped, not infinite
        assert np.isfinite(zero_floor.sigma(1.0))

    def test_survival_monotone(self):
        s = np.linspace(0.0, 1.0, 500)
        surv = MASK.survival(s)
        assert surv[0] == 1.0
        assert np.all(np.diff(surv) <= 0)
        assert surv[-1] == pytest.approx(MASK.delta)

    def test_survival_equals_exp_sigma_bar(self):
        s = np.linspace(0.0, 0.999, 200)
        np.testing.assert_allclose(MASK.survival(s), np.exp(-MASK.sigma_bar(s)), rtol=1e-12)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            MASK.coeffs(1.5)

    def test_reverse_rate_matches_algebra(self):
        # sigma_s e^{-sigma_bar} / (1 - e^{-sigma_bar}) collapses to 1/s.
        rng = np.random.default_rng(7)
        s = rng.uniform(0.01, 0.99, size=100)
        sig, sbar, _ = MASK.coeffs(s)
        direct = sig * np.exp(-sbar) / (1.0 - np.exp(-sbar))
        np.testing.assert_allclose(MASK.reverse_rate(s), direct, rtol=1e-10)


class TestPresets:
    def test_lookup_and_override(self):
        sched = preset("tabular-vp", beta_end=10.0)
        assert sched.beta_end == 10.0
        assert preset("tabular-vp").beta_end == 20.0

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("cosine")

    def test_invalid_kind(self):
        with pytest.raises(ConfigError):
            ContinuousSchedule("cosine", 0.1, 20.0)

    def test_default_pair(self):
        pair = default_schedules()
        assert pair.cont.kind == "linear-vp"
        assert pair.disc.delta == pytest.approx(1e-5)
