import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ledger_closed_form
from seird.errors import PreconditionError
from seird.model import (
    ModelParams,
    Nonlinearity,
    compute_bounds,
    truncate_nonlinearity,
    validate_tau,
)

rate = st.floats(0.01, 1.0)
positive = st.floats(0.01, 3.0)


def ledger_for(nl, n_low=0.5, n_up=2.0):
    base = compute_bounds(ModelParams.normalized_model(1.0, 1.0), 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, nl)
    from dataclasses import replace

    lo, hi = nl.kappa_range(n_low, n_up)
    return replace(base, n_low=n_low, n_up=n_up, kappa_low=lo, kappa_up=hi)


class TestParams:
    def test_rejects_nonpositive_alpha_mu(self):
        with pytest.raises(PreconditionError):
            ModelParams(alpha=0.0, mu=1.0)
        with pytest.raises(PreconditionError):
            ModelParams(alpha=1.0, mu=-1.0)

    def test_rejects_negative_rate(self):
        with pytest.raises(PreconditionError):
            ModelParams(alpha=1.0, mu=1.0, sigma=-0.1)

    def test_normalized_fixes_unit_rates(self):
        p = ModelParams.normalized_model(0.4, 0.2)
        assert (p.beta_i, p.beta_e, p.sigma, p.phi_e, p.phi_r, p.phi_d) == (1, 1, 1, 0, 1, 1)
        assert p.exposed_exit == 1.0
        with pytest.raises(PreconditionError):
            ModelParams(alpha=0.4, mu=0.2, sigma=2.0, normalized=True)


class TestBounds:
    def test_no_growth_keeps_sup(self):
        nl = Nonlinearity.constant()
        for T in (0.1, 1.0, 3.0):
            led = compute_bounds(ModelParams.normalized_model(0.3, 0.3), T, 2.5, 1, 1, 0, 1, nl)
            assert led.n_up == 2.5

    def test_reference_example(self):
        led = compute_bounds(
            ModelParams.normalized_model(0.5, 0.25), 1.0, 2.0, 1.0, 1.0, 0.5, 1.0, Nonlinearity.constant()
        )
        assert led.n_up == pytest.approx(2 * math.exp(0.5), rel=1e-14)
        assert led.n_up == pytest.approx(3.29744, abs=1e-5)
        assert led.s_up == pytest.approx(2.64872, abs=1e-5)
        assert led.h_up == pytest.approx(5.29744, abs=1e-5)
        assert led.i_up == pytest.approx(8.44616, abs=1e-5)
        # closed form gives exp(-8.446164) = 2.14723e-4; the quoted 2.145e-4 is a rounding slip
        assert led.n_low == pytest.approx(2.1472255348e-4, rel=1e-9)
        assert led.n_low == pytest.approx(2.145e-4, rel=2e-3)

    def test_constant_kappa_range(self):
        led = compute_bounds(
            ModelParams.normalized_model(0.5, 0.25), 1.0, 2.0, 1.0, 1.0, 0.5, 1.0, Nonlinearity.constant(kappa=0.7)
        )
        assert led.kappa_low == led.kappa_up == 0.7

    @given(alpha=rate, mu=rate, T=st.floats(0.05, 1.0), sups=st.tuples(positive, positive, positive, positive),
           frac=st.floats(0.01, 1.0))
    def test_matches_closed_form(self, alpha, mu, T, sups, frac):
        sn, ss, sh, si = sups
        led = compute_bounds(ModelParams.normalized_model(alpha, mu), T, sn, ss, sh, si, frac * sn,
                             Nonlinearity.constant())
        expected = ledger_closed_form(T, alpha, mu, sn, ss, sh, si, frac * sn)
        got = (led.n_up, led.s_up, led.h_up, led.i_up, led.n_low)
        assert got == pytest.approx(expected, rel=1e-13)

    @given(alpha=rate, mu=rate, sups=st.tuples(positive, positive, positive, positive),
           which=st.integers(0, 3), bump=st.floats(0.0, 2.0))
    def test_monotone_in_suprema(self, alpha, mu, sups, which, bump):
        p = ModelParams.normalized_model(alpha, mu)
        nl = Nonlinearity("constant", 1.0, "linear", ())
        a = compute_bounds(p, 1.0, *sups, 0.5 * sups[0], nl)
        bigger = list(sups)
        bigger[which] += bump
        b = compute_bounds(p, 1.0, *bigger, 0.5 * sups[0], nl)
        for name in ("n_up", "s_up", "h_up", "i_up", "kappa_up"):
            assert getattr(b, name) >= getattr(a, name)
        assert b.n_low <= a.n_low

    def test_rejects_bad_data(self):
        nl = Nonlinearity.constant()
        p = ModelParams.normalized_model(0.5, 0.5)
        with pytest.raises(PreconditionError):
            compute_bounds(p, 1.0, 1, 1, 1, 1, 0.0, nl)
        with pytest.raises(PreconditionError):
            compute_bounds(p, 0.0, 1, 1, 1, 1, 1.0, nl)

    def test_underflowing_lower_bound_is_rejected(self):
        # exp(-T i_up) leaves the double range for long horizons
        with pytest.raises(PreconditionError, match="not representable"):
            compute_bounds(ModelParams.normalized_model(0.5, 0.5), 20.0, 1, 1, 1, 1, 1.0,
                           Nonlinearity.constant())


class TestTruncation:
    def test_clamped_kappa(self):
        nl = Nonlinearity("constant", 1.0, "linear", ())
        tnl = truncate_nonlinearity(nl, ledger_for(nl))
        assert tnl.kappa(np.array([0.1, 1.0, 5.0])).tolist() == [0.5, 1.0, 2.0]

    def test_saturating_clamped_below(self):
        nl = Nonlinearity("saturating", 1.0, "constant", (1.0,))
        tnl = truncate_nonlinearity(nl, ledger_for(nl))
        assert float(tnl.A(0.1)) == 0.0
        assert float(tnl.A(2.0)) == pytest.approx(0.5)

    @given(st.lists(st.floats(0.5, 2.0), min_size=1, max_size=50))
    def test_identity_inside_interval(self, ys):
        nl = Nonlinearity("saturating", 0.3, "affine", (0.5, 0.2))
        tnl = truncate_nonlinearity(nl, ledger_for(nl))
        y = np.array(ys)
        assert np.array_equal(tnl.A(y), nl.A(y))
        assert np.array_equal(tnl.kappa(y), nl.kappa(y))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
    def test_bounded_everywhere(self, ys):
        nl = Nonlinearity("saturating", 0.3, "affine", (0.5, 0.2))
        led = ledger_for(nl)
        tnl = truncate_nonlinearity(nl, led)
        y = np.concatenate([ys, [led.n_low, led.n_up]])
        k = tnl.kappa(y)
        assert np.all(k >= led.kappa_low) and np.all(k <= led.kappa_up)
        assert np.all(tnl.A(y) >= 0)


class TestTau:
    def test_step_restriction(self):
        p = ModelParams(alpha=2.0, mu=1.0)
        assert validate_tau(p, 0.4)
        check = validate_tau(p, 0.6)
        assert not check and "1/(2(alpha-mu))" in check.reason

    def test_inactive_without_growth(self):
        assert validate_tau(ModelParams(alpha=0.5, mu=1.0), 0.99)
        assert validate_tau(ModelParams(alpha=1.0, mu=1.0), 0.99)

    def test_rejects_large_tau(self):
        for a, m in ((0.1, 1.0), (2.0, 1.0), (1.0, 1.0)):
            assert not validate_tau(ModelParams(alpha=a, mu=m), 1.2)

    @given(alpha=st.floats(0.01, 50.0), mu=st.floats(0.01, 50.0), tau=st.floats(1e-6, 0.999))
    @settings(max_examples=300)
    def test_admissible_has_margin(self, alpha, mu, tau):
        if validate_tau(ModelParams(alpha=alpha, mu=mu), tau):
            lam = 1.0 / tau - alpha + mu
            assert lam > 0
            if alpha > mu:
                assert lam >= 1.0 / (2.0 * tau) * (1 - 1e-12)
