import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sheathlab.diagnostics import WeightSpec, weighted_norm
from sheathlab.dynamics import (PerturbationState, PerturbationSystem, PrimitiveSystem, SchemeConfig,
                                evolve, make_initial, read_trajectory_csv, rhs_eval, step)
from sheathlab.errors import CharacteristicViolation, NonFiniteState, PreconditionError
from sheathlab.grid import HalfLineGrid, PeriodicStrip
from sheathlab.model import PlasmaParams, char_speeds
from sheathlab.stationary import build_profile, constant_profile, default_grid

PROBE = WeightSpec.exponential(0.5, order=1)


@pytest.fixture(scope="module")
def small_profile(ref_params):
    return build_profile(ref_params, default_grid(ref_params, 128))


def _strip_state(state1d, strip):
    ny = strip.ny
    rep = lambda a: np.repeat(a[:, None], ny, axis=1)
    return PerturbationState(state1d.t, rep(state1d.varphi), (rep(state1d.psi[0]), np.zeros(strip.shape)),
                             rep(state1d.zeta), rep(state1d.sigma), strip)


def test_scheme_config_validation():
    for bad in (dict(cfl=0.0), dict(cfl=1.5), dict(spatial_order=3), dict(rk_stages=4),
                dict(limiter="superbee"), dict(output_cadence=0.0)):
        with pytest.raises(PreconditionError):
            SchemeConfig(**bad)


def test_zero_state_rhs_vanishes(ref_profile):
    s = make_initial("gaussian_exp", 0.0, ref_profile.grid, ref_profile, lam=0.5)
    assert np.all(s.sigma == 0.0)
    assert np.max(np.abs(rhs_eval(s, ref_profile))) == 0.0


def test_zero_state_stays_zero(small_profile):
    s = make_initial("gaussian_exp", 0.0, small_profile.grid, small_profile, lam=0.5)
    system = PerturbationSystem(small_profile)
    for _ in range(1000):
        s = step(s, small_profile, system=system)
    assert max(np.max(np.abs(f)) for f in (*s.fields(), s.sigma)) <= 1e-14


def test_rhs_1d_vs_2d_consistency(small_profile):
    s1 = make_initial("gaussian_exp", 1e-3, small_profile.grid, small_profile, lam=0.5)
    strip = PeriodicStrip(small_profile.grid, 16)
    s2 = _strip_state(s1, strip)
    r1 = rhs_eval(s1, small_profile)
    r2 = rhs_eval(s2, small_profile)
    assert np.max(np.abs(r2[[0, 1, 3]] - r1[:, :, None])) <= 1e-12
    assert np.max(np.abs(r2[2])) == 0.0


def test_transverse_independence_preserved(small_profile):
    s1 = make_initial("gaussian_exp", 1e-3, small_profile.grid, small_profile, lam=0.5)
    strip = PeriodicStrip(small_profile.grid, 16)
    s = _strip_state(s1, strip)
    system = PerturbationSystem(small_profile, grid=strip)
    for _ in range(100):
        s = step(s, small_profile, system=system)
    for f in (s.varphi, s.psi[0], s.zeta, s.sigma):
        assert np.max(f.max(axis=1) - f.min(axis=1)) <= 1e-12
    assert np.max(np.abs(s.psi[1])) <= 1e-12


@pytest.mark.parametrize("m,u,T", [(1.0, -2.0, 1.0), (1.0, -1.3, 0.7), (2.0, -1.5, 1.2)])
def test_linearized_speeds_match_eigenvalues(m, u, T):
    p = PlasmaParams(m=m, u_inf=u, T_inf=T, phi_b=0.0)
    grid = HalfLineGrid.uniform(10.0, 64)
    prof = constant_profile(p, grid)
    system = PerturbationSystem(prof, p)
    x = grid.nodes
    zero = np.zeros_like(x)
    i = 20
    eps = 1e-7
    A = np.empty((3, 3))
    for k in range(3):
        f = np.zeros((3, x.size))
        f[k] = x
        rp = system.rhs(eps * f, zero)[:, i]
        rm = system.rhs(-eps * f, zero)[:, i]
        A[:, k] = -(rp - rm) / (2 * eps)
    ev = np.sort(np.linalg.eigvals(A).real)
    c = np.sqrt(p.gamma * p.R * T / m)
    assert ev == pytest.approx([u - c, u, u + c], abs=1e-6)
    if m == 1.0:
        cs = char_speeds(u, T, p)
        assert ev == pytest.approx(sorted([cs.lam1, cs.lam2, cs.lam3]), abs=1e-6)


def test_cfl_step_shrinks_with_refinement(ref_params):
    dts = []
    for M in (128, 256):
        prof = build_profile(ref_params, HalfLineGrid.uniform(30.0, M))
        s = make_initial("gaussian_exp", 1e-3, prof.grid, prof, lam=0.5)
        dts.append(PerturbationSystem(prof).stable_dt(s.hyperbolic()))
    assert dts[1] == pytest.approx(dts[0] / 2, rel=0.05)


def test_time_refinement_converges(small_profile):
    finals = []
    for cfl in (0.4, 0.2, 0.1):
        s = make_initial("gaussian_exp", 1e-3, small_profile.grid, small_profile, lam=0.5)
        out, _ = evolve(s, small_profile, scheme=SchemeConfig(cfl=cfl, t_end=0.5, output_cadence=0.5))
        finals.append(out.hyperbolic())
    d1 = np.max(np.abs(finals[0] - finals[1]))
    d2 = np.max(np.abs(finals[1] - finals[2]))
    assert d2 < d1
    assert d1 / d2 > 3.0


def _cross_solver_gap(params, M, t_end=1.0):
    prof = build_profile(params, default_grid(params, M))
    sc = SchemeConfig(t_end=t_end, output_cadence=t_end)
    s0 = make_initial("gaussian_exp", 1e-3, prof.grid, prof, lam=0.5)
    s1, _ = evolve(s0, prof, scheme=sc)
    prim = PrimitiveSystem(prof, sc)
    p1 = prim.evolve(prim.from_perturbation(s0), t_end)
    other = prim.to_perturbation(p1)
    mine = (s1.varphi, s1.psi[0], s1.zeta, s1.sigma)
    return max(float(np.max(np.abs(a - b))) for a, b in zip(mine, other))


def test_cross_solver_agreement_converges(ref_params):
    gaps = [_cross_solver_gap(ref_params, M) for M in (256, 512, 1024)]
    assert gaps[0] < 1e-4
    assert 3.0 < gaps[0] / gaps[1] < 5.0
    assert 3.0 < gaps[1] / gaps[2] < 5.0


def test_spatial_refinement_norms(ref_params):
    norms = []
    for M in (512, 1024):
        prof = build_profile(ref_params, default_grid(ref_params, M))
        s = make_initial("gaussian_exp", 1e-3, prof.grid, prof, lam=0.5)
        _, traj = evolve(s, prof, scheme=SchemeConfig(t_end=2.0, output_cadence=1.0), probes=[PROBE])
        norms.append(traj.norms(PROBE.id))
    assert np.max(np.abs(norms[0] - norms[1]) / norms[1]) < 0.01


def test_domain_doubling_probe_insensitive(ref_params):
    L = 33.07
    out = []
    for mult, M in ((1, 512), (2, 1024)):
        prof = build_profile(ref_params, HalfLineGrid.uniform(mult * L, M))
        s = make_initial("gaussian_exp", 1e-3, prof.grid, prof, lam=0.5)
        _, traj = evolve(s, prof, scheme=SchemeConfig(t_end=2.0, output_cadence=1.0), probes=[PROBE])
        out.append(traj.norms(PROBE.id))
    assert np.max(np.abs(out[0] - out[1]) / out[1]) < 0.01


def test_characteristic_violation_raised(small_profile):
    bump = lambda x, y: (0 * x, [3.0 * np.exp(-(x - 2.0) ** 2)], 0 * x)
    s = make_initial("custom", 1.0, small_profile.grid, small_profile, custom=bump)
    with pytest.raises(CharacteristicViolation) as info:
        step(s, small_profile)
    assert info.value.speed >= 0


def test_temperature_positivity_enforced(small_profile):
    cold = lambda x, y: (0 * x, [0 * x], -2.0 * np.exp(-(x - 2.0) ** 2))
    with pytest.raises(PreconditionError):
        make_initial("custom", 1.0, small_profile.grid, small_profile, custom=cold)
    s = make_initial("gaussian_exp", 1e-3, small_profile.grid, small_profile, lam=0.5)
    fields = s.hyperbolic()
    fields[-1, 5] = -10.0
    with pytest.raises(NonFiniteState):
        PerturbationSystem(small_profile).check_characteristics(fields)


def test_poisson_is_current_after_each_step(small_profile):
    s = make_initial("gaussian_exp", 1e-3, small_profile.grid, small_profile, lam=0.5)
    system = PerturbationSystem(small_profile)
    for _ in range(20):
        s = step(s, small_profile, system=system)
        assert system.poisson_residual(s) < 1e-10


@pytest.mark.parametrize("family,kw", [("gaussian_exp", dict(lam=0.5)), ("gaussian_alg", dict(lam=2.0, beta=0.3))])
def test_initial_families(small_profile, family, kw):
    s = make_initial(family, 1e-3, small_profile.grid, small_profile, **kw)
    assert s.is_finite()
    assert s.t == 0.0
    assert all(f[-1] == 0.0 for f in s.fields())
    assert np.isfinite(weighted_norm(list(s.fields()), s.grid, PROBE))


def test_initial_seed_reproducible(small_profile):
    a = make_initial("gaussian_exp", 1e-3, small_profile.grid, small_profile, seed=7)
    b = make_initial("gaussian_exp", 1e-3, small_profile.grid, small_profile, seed=7)
    c = make_initial("gaussian_exp", 1e-3, small_profile.grid, small_profile, seed=8)
    assert np.array_equal(a.hyperbolic(), b.hyperbolic())
    assert not np.array_equal(a.hyperbolic(), c.hyperbolic())


def test_initial_rejects_unknown_family(small_profile):
    with pytest.raises(PreconditionError):
        make_initial("boxcar", 1e-3, small_profile.grid, small_profile)


def test_contraction_and_trajectory_csv(ref_profile, tmp_path):
    s = make_initial("gaussian_exp", 1e-3, ref_profile.grid, ref_profile, lam=0.5)
    _, traj = evolve(s, ref_profile, scheme=SchemeConfig(t_end=5.0, output_cadence=1.0), probes=[PROBE])
    assert traj.t == pytest.approx([0, 1, 2, 3, 4, 5], abs=1e-12)
    n = traj.norms(PROBE.id)
    assert n[5] < n[1]
    assert np.all(traj.column("min_T") > 0) and np.all(traj.column("min_n") > 0)
    traj.to_csv(tmp_path / "traj.csv")
    back = read_trajectory_csv(tmp_path / "traj.csv")
    assert np.array_equal(back[f"norm_{PROBE.id}"], n)


def test_zero_amplitude_probes_vanish(small_profile):
    s = make_initial("gaussian_exp", 0.0, small_profile.grid, small_profile, lam=0.5)
    _, traj = evolve(s, small_profile, scheme=SchemeConfig(t_end=1.0, output_cadence=0.5), probes=[PROBE])
    assert np.all(traj.norms(PROBE.id) == 0.0)
    assert np.all(traj.column("E0") == 0.0)


@settings(max_examples=10, deadline=None)
@given(amp=st.floats(1e-6, 1e-3), seed=st.integers(0, 10_000))
def test_short_runs_stay_finite(small_profile, amp, seed):
    s = make_initial("gaussian_exp", amp, small_profile.grid, small_profile, seed=seed)
    out, traj = evolve(s, small_profile, scheme=SchemeConfig(t_end=0.2, output_cadence=0.1), probes=[PROBE])
    assert out.is_finite()
    assert np.all(np.isfinite(traj.wall_flux))
