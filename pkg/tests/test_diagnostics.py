import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheathlab.diagnostics import (DecayFit, QFormReport, WeightClippedWarning, WeightSpec, energy_E0,
                                   fit_decay, qform_check, qform_coefficients, theorem_rate,
                                   weighted_norm)
from sheathlab.dynamics import make_initial
from sheathlab.errors import FitUnderdetermined, PreconditionError
from sheathlab.grid import HalfLineGrid, PeriodicStrip
from sheathlab.model import PlasmaParams, Regime, degenerate_constants, solve_lambda0


@pytest.fixture(scope="module")
def qparams():
    return PlasmaParams.degenerate(phi_b=1e-3)


@pytest.fixture(scope="module")
def qbeta(qparams):
    return degenerate_constants(qparams).Gamma * math.sqrt(qparams.phi_b)


@pytest.fixture(scope="module")
def qgrid():
    return HalfLineGrid.geometric(2000.0, 1024)


def test_unweighted_constant_norm():
    g = HalfLineGrid.uniform(7.0, 64)
    f = np.full(65, 3.0)
    assert weighted_norm(f, g, WeightSpec.algebraic(0.0, 1.0)) == pytest.approx(3.0 * math.sqrt(7.0), rel=1e-14)


def test_algebraic_weight_closed_form():
    g = HalfLineGrid.uniform(1.0, 4096)
    val = weighted_norm(np.ones(4097), g, WeightSpec.algebraic(2.0, 1.0))
    assert val == pytest.approx(math.sqrt(7.0 / 3.0), abs=1e-7)
    assert val == pytest.approx(1.52753, abs=1e-5)


def test_first_order_norm_of_sine():
    g = HalfLineGrid.uniform(3.0, 4096)
    # sin^2 + cos^2 = 1, so the H1 integral is that of the weight alone
    val = weighted_norm(np.sin(g.nodes), g, WeightSpec.algebraic(2.0, 0.5, order=1))
    assert val == pytest.approx(math.sqrt((2.5**3 - 1.0) / 1.5), abs=1e-4)


def test_exponential_weight_clipping_flagged():
    g = HalfLineGrid.uniform(1000.0, 128)
    with pytest.warns(WeightClippedWarning):
        val = weighted_norm(np.zeros(129), g, WeightSpec.exponential(1.0))
    assert val == 0.0


def test_weight_spec_validation():
    with pytest.raises(PreconditionError):
        WeightSpec.algebraic(1.0, 0.0)
    with pytest.raises(PreconditionError):
        WeightSpec.exponential(-1.0)
    with pytest.raises(PreconditionError):
        WeightSpec("other")


@settings(max_examples=50, deadline=None)
@given(a1=st.floats(-3, 6), a2=st.floats(-3, 6), beta=st.floats(0.01, 3))
def test_norm_monotone_in_alpha(a1, a2, beta):
    g = HalfLineGrid.uniform(10.0, 128)
    f = np.exp(-g.nodes) * np.cos(g.nodes)
    lo, hi = sorted((a1, a2))
    assert (weighted_norm(f, g, WeightSpec.algebraic(lo, beta))
            <= weighted_norm(f, g, WeightSpec.algebraic(hi, beta)) * (1 + 1e-14))


def test_norm_refinement_second_order():
    vals = []
    for M in (128, 256, 512, 1024):
        g = HalfLineGrid.geometric(10.0, M)
        f = np.exp(-0.5 * g.nodes) * np.sin(2 * g.nodes)
        vals.append(weighted_norm(f, g, WeightSpec.algebraic(2.0, 0.5, order=1)))
    d = np.abs(np.diff(vals))
    assert 3.0 <= d[0] / d[1] <= 5.0
    assert 3.0 <= d[1] / d[2] <= 5.0


def test_strip_norm_reduces_to_line():
    g = HalfLineGrid.uniform(5.0, 64)
    strip = PeriodicStrip(g, 8)
    f = np.exp(-g.nodes)
    w = WeightSpec.algebraic(1.0, 0.5, order=2)
    line = weighted_norm(f, g, w)
    flat = weighted_norm(np.repeat(f[:, None], 8, 1), strip, w)
    assert flat == pytest.approx(line * math.sqrt(strip.Ly), rel=1e-13)


def test_energy_zero_state(ref_profile):
    s = make_initial("gaussian_exp", 0.0, ref_profile.grid, ref_profile, lam=0.5)
    assert energy_E0(s, ref_profile) == 0.0


def test_energy_quadratic_scaling(ref_profile):
    e = [energy_E0(make_initial("gaussian_exp", a, ref_profile.grid, ref_profile, lam=0.5), ref_profile)
         for a in (5e-5, 1e-4)]
    assert e[0] > 0
    assert 3.9 <= e[1] / e[0] <= 4.1


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0.0, 1e-2), seed=st.integers(0, 1000))
def test_energy_nonnegative(ref_profile, a, seed):
    s = make_initial("gaussian_exp", a, ref_profile.grid, ref_profile, lam=0.5, seed=seed)
    assert energy_E0(s, ref_profile) >= 0.0


def test_fit_exact_algebraic_model():
    t = np.linspace(0, 40, 81)
    fit = fit_decay((t, 3.0 * (1 + 0.5 * t) ** -2.0), "algebraic", beta=0.5)
    assert fit.rate == pytest.approx(2.0, abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.amplitude == pytest.approx(3.0, rel=1e-9)


def test_fit_perturbed_exponential():
    t = np.linspace(0, 50, 201)
    y = np.exp(-0.3 * t) * (1 + 0.01 * np.sin(t))
    fit = fit_decay(list(zip(t, y)), "exponential")
    assert fit.rate == pytest.approx(0.30, abs=0.01)
    assert 0.0 <= fit.r_squared <= 1.0
    assert fit.window[0] >= 10.0 - 1e-12


def test_fit_idempotent():
    t = np.linspace(0, 30, 61)
    y = np.exp(-0.2 * t) * (1 + 0.05 * np.cos(3 * t))
    fit = fit_decay((t, y), "exponential")
    again = fit_decay((t, fit.predict(t)), "exponential")
    assert again.rate == pytest.approx(fit.rate, abs=1e-10)


def test_fit_underdetermined():
    t = np.linspace(0, 1, 5)
    with pytest.raises(FitUnderdetermined):
        fit_decay((t, np.exp(-t)), "exponential")


def test_fit_drops_nonpositive_values():
    t = np.linspace(0, 20, 41)
    y = np.exp(-0.5 * t)
    y[30] = 0.0
    fit = fit_decay((t, y), "exponential")
    assert fit.flagged
    assert fit.rate == pytest.approx(0.5, abs=1e-10)


def test_fit_requires_beta_for_algebraic():
    with pytest.raises(PreconditionError):
        fit_decay((np.arange(10.0), np.ones(10)), "algebraic")


def test_theorem_rate():
    assert theorem_rate(4.0, 1.0, Regime.DEGENERATE_BOHM) == 1.0
    assert theorem_rate(4.0, 1.0, Regime.NONDEGENERATE_BOHM) == 3.0
    with pytest.raises(PreconditionError):
        theorem_rate(1.0, 2.0, Regime.DEGENERATE_BOHM)


def test_qform_S_at_least_one(qparams, qbeta, qgrid):
    for beta in (qbeta, 0.5 * qbeta, 0.1 * qbeta):
        *_, S = qform_coefficients(qgrid.nodes, 3.0, beta, qparams)
        assert np.all(S >= 1.0 - 1e-15)


def test_qform_reference_passes(qparams, qbeta, qgrid):
    rep = qform_check(4.0, qbeta, qparams, qgrid)
    assert rep.flags44.all() and rep.flags45.all() and rep.flags46.all()
    assert np.all(rep.det_expr < 0)
    assert rep.c_margin > 0 and rep.min_scaled_eig > 0
    assert rep.oracle_agrees
    assert rep.x1.size == qgrid.M + 1


def test_qform_fails_above_critical_exponent(qparams, qbeta, qgrid):
    eps = solve_lambda0(qparams.gamma) + 1.0
    rep = qform_check(eps, qbeta, qparams, qgrid, check_bounds=False)
    assert not rep.flags46.all()
    assert rep.oracle_agrees


@pytest.mark.parametrize("kwargs", [dict(epsilon=5.5), dict(epsilon=0.0), dict(epsilon=3.0, lam=2.0)])
def test_qform_bounds_rejected(qparams, qbeta, qgrid, kwargs):
    with pytest.raises(PreconditionError):
        qform_check(beta=qbeta, params=qparams, grid=qgrid, **kwargs)


def test_qform_beta_bound_and_regime(qparams, qbeta, qgrid):
    with pytest.raises(PreconditionError):
        qform_check(4.0, 1.5 * qbeta, qparams, qgrid)
    with pytest.raises(PreconditionError):
        qform_check(4.0, 0.1, PlasmaParams(), qgrid)


@settings(max_examples=40, deadline=None)
@given(eps=st.floats(0.05, 8.0), frac=st.floats(0.05, 1.0), phi_b=st.floats(1e-4, 0.05),
       gamma=st.floats(1.05, 3.0))
def test_qform_conditions_imply_positive_definite(eps, frac, phi_b, gamma):
    p = PlasmaParams.degenerate(gamma=gamma, phi_b=phi_b)
    beta = frac * degenerate_constants(p).Gamma * math.sqrt(phi_b)
    x = np.concatenate([[0.0], np.geomspace(1e-3, 1e4, 200)])
    rep = qform_check(eps, beta, p, x, check_bounds=False)
    ok = rep.conditions_ok
    # the three conditions are sufficient for positivity
    assert np.all(rep.min_eig[ok] > 0)
    assert rep.oracle_agrees


def test_qform_flags_pure_function(qparams, qbeta, qgrid):
    a = qform_check(4.0, qbeta, qparams, qgrid)
    b = qform_check(4.0, qbeta, qparams, qgrid)
    assert np.array_equal(a.flags46, b.flags46) and np.array_equal(a.q1, b.q1)


def test_qform_csv(qparams, qbeta, qgrid, tmp_path):
    rep = qform_check(4.0, qbeta, qparams, qgrid)
    rep.to_csv(tmp_path / "qform.csv")
    lines = (tmp_path / "qform.csv").read_text().splitlines()
    assert lines[0] == "x1,q1,q2,q3,q4,q5,B,S,min_eig_scaled,ok44,ok45,ok46"
    assert len(lines) == qgrid.M + 2
