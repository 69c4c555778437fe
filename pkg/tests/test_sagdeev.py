import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheathlab.errors import BranchExhausted, PreconditionError
from sheathlab.model import PlasmaParams, Regime
from sheathlab.sagdeev import SagdeevContext, V_of_phi, existence_check, f_inverse, f_of_n


@pytest.fixture(scope="module")
def ctx():
    return SagdeevContext(PlasmaParams())


@pytest.fixture(scope="module")
def deg_ctx():
    return SagdeevContext(PlasmaParams.degenerate(phi_b=0.01))


def test_f_vanishes_at_far_field(ctx):
    assert f_of_n(1.0, ctx) == 0.0


def test_f_reference_value(ctx):
    expected = 2.5 * (0.5 ** (2.0 / 3.0) - 1.0) + 2.0 * (4.0 - 1.0)
    assert f_of_n(0.5, ctx) == pytest.approx(expected, rel=1e-14)
    assert f_of_n(0.5, ctx) == pytest.approx(5.07490, abs=1e-5)


def test_f_rejects_nonpositive_density(ctx):
    with pytest.raises(PreconditionError):
        f_of_n(0.0, ctx)


def test_critical_density_is_stationary_point(ctx):
    c = ctx.c_inf
    assert c == pytest.approx((4.0 / (5.0 / 3.0)) ** (1.0 / (8.0 / 3.0)), rel=1e-14)
    assert c > 1.0
    h = 1e-5
    fd = (f_of_n(c + h, ctx) - f_of_n(c - h, ctx)) / (2 * h)
    assert abs(fd) < 1e-6
    assert ctx.f_at_c_inf <= 0.0


def test_f_decreasing_on_branch(ctx):
    n = np.linspace(0.01, ctx.c_inf, 2000)
    assert np.all(np.diff(ctx.f_of_n(n)) < 0)


def test_inverse_at_zero_is_one(ctx):
    assert f_inverse(0.0, ctx) == 1.0


def test_inverse_reference_value(ctx):
    assert f_inverse(f_of_n(0.5, ctx), ctx) == pytest.approx(0.5, rel=1e-13)
    assert f_inverse(5.07490, ctx) == pytest.approx(0.5, abs=1e-5)


def test_inverse_round_trip(ctx):
    lo, hi = ctx.f_at_c_inf, float(f_of_n(0.01, ctx))
    phi = np.random.default_rng(11).uniform(lo, hi, 1000)
    n = ctx.f_inverse(phi)
    assert np.max(np.abs(ctx.f_of_n(n) - phi)) < 1e-11
    assert np.all((n > 0) & (n <= ctx.c_inf * (1 + 1e-12)))


def test_inverse_strictly_decreasing(ctx):
    phi = np.sort(np.random.default_rng(5).uniform(ctx.f_at_c_inf + 1e-9, 3.0, 1000))
    assert np.all(np.diff(ctx.f_inverse(phi)) < 0)


def test_inverse_below_branch_minimum_exhausted(ctx):
    with pytest.raises(BranchExhausted):
        f_inverse(ctx.f_at_c_inf - 1e-6, ctx)


def test_inverse_at_branch_edge(ctx):
    assert f_inverse(ctx.f_at_c_inf, ctx) == pytest.approx(ctx.c_inf, rel=1e-6)


def test_subsonic_inverse_uses_upper_branch():
    c = SagdeevContext(PlasmaParams(u_inf=-1.0))
    assert c.c_inf < 1.0
    assert float(c.f_inverse(0.0)) == 1.0
    n = c.f_inverse(np.array([0.01, 0.05]))
    assert np.all(n >= c.c_inf)
    assert np.allclose(c.f_of_n(n), [0.01, 0.05], atol=1e-12)


def test_potential_vanishes_at_zero(ctx):
    assert V_of_phi(0.0, ctx) == 0.0


def test_potential_derivative_is_integrand(ctx):
    h = 1e-4
    fd = (V_of_phi(0.1 + h, ctx) - V_of_phi(0.1 - h, ctx)) / (2 * h)
    assert fd == pytest.approx(f_inverse(0.1, ctx) - math.exp(-0.1), abs=1e-8)


def test_potential_curvature_nondegenerate(ctx):
    assert ctx.V2_at_zero == pytest.approx(4.0 / 7.0, rel=1e-14)
    h = 1e-3
    fd2 = (V_of_phi(h, ctx) - 2 * V_of_phi(0.0, ctx) + V_of_phi(-h, ctx)) / h**2
    assert fd2 == pytest.approx(4.0 / 7.0, abs=1e-5)


def test_potential_curvature_degenerate(deg_ctx):
    assert abs(deg_ctx.V2_at_zero) < 1e-8
    h = 1e-3
    fd2 = (V_of_phi(h, deg_ctx) + V_of_phi(-h, deg_ctx)) / h**2
    assert abs(fd2) < 1e-4


@pytest.mark.parametrize("params", [PlasmaParams(), PlasmaParams.degenerate(phi_b=0.01),
                                    PlasmaParams(u_inf=-1.0), PlasmaParams(u_inf=-3.0, gamma=1.4)])
def test_closed_form_matches_quadrature(params):
    c = SagdeevContext(params)
    lo = max(-0.3, c.f_at_c_inf + 1e-6)
    for phi in np.linspace(lo, 0.3, 25):
        assert float(c.V_closed(phi)) == pytest.approx(c.V_of_phi(phi), abs=1e-13)


def test_derivatives_match_closed_form(ctx):
    phi = np.linspace(-0.2, 0.3, 17)
    h = 1e-5
    fd1 = (ctx.V_closed(phi + h) - ctx.V_closed(phi - h)) / (2 * h)
    fd2 = (ctx.dV(phi + h) - ctx.dV(phi - h)) / (2 * h)
    assert np.allclose(fd1, ctx.dV(phi), atol=1e-9)
    assert np.allclose(fd2, ctx.d2V(phi), atol=1e-8)


def test_potential_nonnegative_on_accepted_segment():
    for phi_b in (0.1, 0.05, -0.05, -0.1):
        p = PlasmaParams(phi_b=phi_b)
        c = SagdeevContext(p)
        assert existence_check(p).exists_monotone
        eta = np.linspace(0, phi_b, 200)
        assert np.all(c.V_closed(eta) >= 0)


def test_existence_trivial_for_zero_boundary_potential():
    for u in (-2.0, -math.sqrt(8 / 3), -1.0):
        v = existence_check(PlasmaParams(u_inf=u, phi_b=0.0))
        assert v.exists_monotone and v.trivial


def test_existence_reference_true():
    v = existence_check(PlasmaParams())
    assert v.exists_monotone
    assert v.cond_V > 0 and v.cond_f > 0
    assert v.regime is Regime.NONDEGENERATE_BOHM


def test_existence_no_solution_band_false():
    v = existence_check(PlasmaParams(u_inf=-1.5))
    assert v.regime is Regime.NO_SOLUTION_BAND
    assert not v.exists_monotone


def test_existence_fails_below_branch():
    # a boundary potential far below f(c_inf)
    v = existence_check(PlasmaParams(phi_b=-5.0))
    assert not v.exists_monotone
    assert v.cond_f < 0 and math.isnan(v.cond_V)


@settings(max_examples=60, deadline=None)
@given(m=st.floats(0.5, 3.0), gamma=st.floats(1.1, 3.0), T=st.floats(0.3, 3.0),
       excess=st.floats(-0.5, 2.0), phi_b=st.floats(-0.1, 0.1))
def test_existence_biconditional(m, gamma, T, excess, phi_b):
    bohm = (gamma * T + 1.0) / m
    u = -math.sqrt(max(bohm + excess, 1e-3))
    p = PlasmaParams(m=m, gamma=gamma, T_inf=T, u_inf=u, phi_b=phi_b)
    v = existence_check(p)
    expected = v.regime.admits_solution and v.cond_f >= 0 and v.cond_V >= 0
    assert v.exists_monotone == expected
    if v.regime is Regime.NO_SOLUTION_BAND and phi_b != 0:
        assert not v.exists_monotone


def test_curvature_sign_tracks_regime():
    for excess in np.linspace(-0.5, 3.0, 36):
        for g in (1.2, 5.0 / 3.0, 2.5):
            bohm = g + 1.0
            u2 = bohm + excess
            if u2 <= g:
                continue
            p = PlasmaParams(gamma=g, u_inf=-math.sqrt(u2))
            c = SagdeevContext(p)
            v2 = c.V2_at_zero
            if p.u_inf**2 > bohm * (1 + 1e-12):
                assert v2 > 1e-8
            elif p.u_inf**2 < bohm * (1 - 1e-12):
                assert v2 < -1e-8
    deg = SagdeevContext(PlasmaParams.degenerate(gamma=2.5))
    assert abs(deg.V2_at_zero) < 1e-8
