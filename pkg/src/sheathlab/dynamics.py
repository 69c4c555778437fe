"""Time evolution of perturbations of a stationary sheath.

Unknowns are the log-density perturbation ``varphi``, the velocity
perturbation ``psi`` (one array per direction), the temperature perturbation
``zeta`` and the potential perturbation ``sigma``.  The hyperbolic part is
advanced with SSP Runge-Kutta; ``sigma`` is re-solved from the nonlinear
Poisson equation after every stage.

Advection is upwinded along the local normal velocity (limited second-order
reconstruction in the computational coordinate); pressure, divergence and
potential gradients use centered differences.  The transverse direction is
periodic and gets a weak fourth-difference dissipation, because the centered
transverse coupling alone sits on the imaginary axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .diagnostics import energy_E0, weighted_norm
from .errors import CharacteristicViolation, NonFiniteState, PreconditionError
from .grid import HalfLineGrid, PeriodicStrip
from .model import PlasmaParams, char_speeds
from .poisson import PoissonProblem, laplacian_coefficients, poisson_solve
from .stationary import StationaryProfile

TIME_EPS = 1e-12


@dataclass(frozen=True)
class SchemeConfig:
    cfl: float = 0.5
    spatial_order: int = 2
    rk_stages: int = 2
    t_end: float = 1.0
    output_cadence: float = 0.1
    limiter: str = "minmod"
    transverse_dissipation: float = 1.0

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise PreconditionError("cfl must lie in (0, 1]")
        if self.spatial_order not in (1, 2):
            raise PreconditionError("spatial_order must be 1 or 2")
        if self.rk_stages not in (2, 3):
            raise PreconditionError("rk_stages must be 2 or 3")
        if self.limiter not in ("minmod", "none"):
            raise PreconditionError("limiter must be 'minmod' or 'none'")
        if not self.t_end >= 0:
            raise PreconditionError("t_end must be nonnegative")
        if not self.output_cadence > 0:
            raise PreconditionError("output_cadence must be positive")
        if self.transverse_dissipation < 0:
            raise PreconditionError("transverse_dissipation must be nonnegative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class PerturbationState:
    t: float
    varphi: np.ndarray
    psi: tuple
    zeta: np.ndarray
    sigma: np.ndarray
    grid: HalfLineGrid | PeriodicStrip

    @property
    def dim(self) -> int:
        return len(self.psi)

    def fields(self):
        return (self.varphi, *self.psi, self.zeta)

    def hyperbolic(self):
        """(varphi, psi_1, ..., zeta) as one stacked array."""
        return np.stack(self.fields())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(f)) for f in (*self.fields(), self.sigma))


def _bcast(a, grid):
    return a[:, None] if isinstance(grid, PeriodicStrip) else a


def _x1(grid) -> HalfLineGrid:
    return grid.x1 if isinstance(grid, PeriodicStrip) else grid


# --- difference operators --------------------------------------------------

def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def d_centered(q, jac):
    """Second-order centered derivative along axis 0, one-sided at both ends."""
    out = np.empty_like(q)
    out[1:-1] = 0.5 * (q[2:] - q[:-2])
    out[0] = 0.5 * (-3.0 * q[0] + 4.0 * q[1] - q[2])
    out[-1] = 0.5 * (3.0 * q[-1] - 4.0 * q[-2] + q[-3])
    return out / jac


def d_upwind(q, jac, speed, order=2, limiter="minmod"):
    """Upwind derivative along axis 0 selected by the sign of ``speed``."""
    dq = np.diff(q, axis=0)
    fwd = np.empty_like(q)
    bwd = np.empty_like(q)
    if order == 1:
        fwd[:-1] = dq
        fwd[-1] = dq[-1]
        bwd[1:] = dq
        bwd[0] = dq[0]
    else:
        dm = np.concatenate([(2.0 * dq[0] - dq[1])[None], dq])
        dp = np.concatenate([dq, (2.0 * dq[-1] - dq[-2])[None]])
        s = _minmod(dm, dp) if limiter == "minmod" else 0.5 * (dm + dp)
        fwd[:-1] = dq - 0.5 * (s[1:] - s[:-1])
        fwd[-1] = 0.5 * (3.0 * q[-1] - 4.0 * q[-2] + q[-3])
        bwd[1:] = dq + 0.5 * (s[1:] - s[:-1])
        bwd[0] = 0.5 * (-3.0 * q[0] + 4.0 * q[1] - q[2])
    return np.where(speed < 0, fwd, bwd) / jac


def dy_centered(q, hy):
    return (np.roll(q, -1, axis=1) - np.roll(q, 1, axis=1)) / (2.0 * hy)


def dy_upwind(q, hy, speed, order=2, limiter="minmod"):
    dp = np.roll(q, -1, axis=1) - q
    dm = q - np.roll(q, 1, axis=1)
    if order == 1:
        fwd, bwd = dp, dm
    else:
        s = _minmod(dm, dp) if limiter == "minmod" else 0.5 * (dm + dp)
        fwd = dp - 0.5 * (np.roll(s, -1, axis=1) - s)
        bwd = dm + 0.5 * (s - np.roll(s, 1, axis=1))
    return np.where(speed < 0, fwd, bwd) / hy


def dy_fourth(q):
    return (np.roll(q, -2, axis=1) - 4.0 * np.roll(q, -1, axis=1) + 6.0 * q
            - 4.0 * np.roll(q, 1, axis=1) + np.roll(q, 2, axis=1))


# --- perturbation system ---------------------------------------------------

class PerturbationSystem:
    """Discrete right-hand side, time step and Poisson coupling for one profile."""

    def __init__(self, profile: StationaryProfile, params: PlasmaParams | None = None,
                 scheme: SchemeConfig | None = None, grid=None, dim: int | None = None):
        self.profile = profile
        self.params = params or profile.params
        self.scheme = scheme or SchemeConfig()
        self.grid = grid if grid is not None else profile.grid
        if _x1(self.grid) is not profile.grid and not np.array_equal(_x1(self.grid).nodes, profile.x):
            raise PreconditionError("grid does not match the stationary profile")
        self.two_d = isinstance(self.grid, PeriodicStrip)
        self.dim = dim or (2 if self.two_d else 1)
        if self.dim > 1 and not self.two_d:
            raise PreconditionError("multi-dimensional runs need a PeriodicStrip grid")
        g = self.grid
        self.jac = _bcast(_x1(g).jac, g)
        self.hy = g.hy if self.two_d else None
        pr = profile
        self.v_t = _bcast(pr.v_t, g)
        self.n_t = _bcast(pr.n_t, g)
        self.u_t = _bcast(pr.u_t, g)
        self.T_t = _bcast(pr.T_t, g)
        self.dv = _bcast(pr.dv, g)
        self.du = _bcast(pr.du, g)
        self.dT = _bcast(pr.dT, g)
        self.shape = g.shape if self.two_d else (_x1(g).M + 1,)

    # -- Poisson coupling
    def solve_sigma(self, varphi, guess=None):
        prob = PoissonProblem(self.grid, self.profile.v_t, self.profile.phi_t, varphi)
        return poisson_solve(prob, guess).sigma

    def poisson_residual(self, state: PerturbationState) -> float:
        prob = PoissonProblem(self.grid, self.profile.v_t, self.profile.phi_t, state.varphi)
        r = prob.residual(state.sigma)
        return float(np.max(np.abs(r[1:-1])))

    # -- speeds
    def primitives(self, fields):
        u1 = self.u_t + fields[1]
        T = self.T_t + fields[-1]
        return u1, T

    def check_characteristics(self, fields):
        """Raise if any normal characteristic speed is nonnegative; return max |speed|."""
        u1, T = self.primitives(fields)
        if np.any(T <= 0) or not np.all(np.isfinite(T)):
            raise NonFiniteState("temperature lost positivity")
        cs = char_speeds(u1, T, self.params)
        worst = np.maximum.reduce([cs.lam1, cs.lam2, cs.lam3, cs.lam_extra])
        if np.any(worst >= 0):
            idx = np.unravel_index(int(np.argmax(worst)), worst.shape)
            raise CharacteristicViolation(
                f"characteristic speed {float(worst[idx]):.3e} >= 0 at node {idx}",
                index=idx, speed=float(worst[idx]))
        c = np.sqrt(self.params.gamma * self.params.R * T / self.params.m)
        return max(float(np.max(cs.max_abs())), float(np.max(np.abs(u1) + c)))

    def stable_dt(self, fields) -> float:
        u1, T = self.primitives(fields)
        c = np.sqrt(self.params.gamma * self.params.R * T / self.params.m)
        rate = (np.abs(u1) + c) / self.jac
        if self.two_d:
            rate = rate + (np.abs(fields[2]) + c) / self.hy
        cs = char_speeds(u1, T, self.params)
        rate = np.maximum(rate, cs.max_abs() / self.jac)
        return self.scheme.cfl / float(np.max(rate))

    # -- right-hand side
    def rhs(self, fields, sigma):
        """Time derivative of the stacked (varphi, psi..., zeta)."""
        p = self.params
        sc = self.scheme
        order, lim = sc.spatial_order, sc.limiter
        varphi, zeta = fields[0], fields[-1]
        psi = fields[1:-1]
        u1, T = self.primitives(fields)
        jac = self.jac

        def adv(q):
            a = u1 * d_upwind(q, jac, u1, order, lim)
            if self.two_d:
                u2 = psi[1]
                a = a + u2 * dy_upwind(q, self.hy, u2, order, lim)
            return a

        def grad(q):
            g = [d_centered(q, jac)]
            if self.two_d:
                g.append(dy_centered(q, self.hy))
            g.extend(np.zeros_like(q) for _ in range(len(psi) - len(g)))
            return g

        div = d_centered(psi[0], jac)
        if self.two_d:
            div = div + dy_centered(psi[1], self.hy)

        out = np.empty((len(fields),) + self.shape)
        out[0] = -adv(varphi) - div - psi[0] * self.dv
        gphi, gzeta, gsig = grad(varphi), grad(zeta), grad(sigma)
        for k, pk in enumerate(psi):
            r = -adv(pk) - (p.R * T * gphi[k] + p.R * gzeta[k] - gsig[k]) / p.m
            if k == 0:
                r = r - psi[0] * self.du - (p.R / p.m) * zeta * self.dv
            out[1 + k] = r
        out[-1] = (-adv(zeta) - (p.gamma - 1.0) * T * div - psi[0] * self.dT
                   - (p.gamma - 1.0) * zeta * self.du)
        if self.two_d and sc.transverse_dissipation > 0:
            c = np.sqrt(p.gamma * p.R * T / p.m)
            coef = sc.transverse_dissipation * (np.abs(psi[1]) + c) / (16.0 * self.hy)
            for k in range(len(fields)):
                out[k] -= coef * dy_fourth(fields[k])
        out[:, -1] = 0.0
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(out))[0]
            raise NonFiniteState(f"non-finite right-hand side at {tuple(int(i) for i in bad)}")
        return out

    # -- stepping
    def stage_update(self, fields, sigma, dt):
        new = fields + dt * self.rhs(fields, sigma)
        new[:, -1] = 0.0
        return new, self.solve_sigma(new[0], sigma)

    def step_fields(self, fields, sigma, dt):
        if self.scheme.rk_stages == 2:
            f1, s1 = self.stage_update(fields, sigma, dt)
            f2, _ = self.stage_update(f1, s1, dt)
            out = 0.5 * (fields + f2)
        else:
            f1, s1 = self.stage_update(fields, sigma, dt)
            f2, _ = self.stage_update(f1, s1, dt)
            f2 = 0.75 * fields + 0.25 * f2
            s2 = self.solve_sigma(f2[0], s1)
            f3, _ = self.stage_update(f2, s2, dt)
            out = fields / 3.0 + 2.0 / 3.0 * f3
        out[:, -1] = 0.0
        return out, self.solve_sigma(out[0], sigma)

    def to_state(self, t, fields, sigma) -> PerturbationState:
        return PerturbationState(t, fields[0], tuple(fields[1:-1]), fields[-1], sigma, self.grid)


def make_initial(family: str, amplitude: float, grid, profile: StationaryProfile,
                 lam: float = 1.0, beta: float = 1.0, center: float = 2.0, width: float = 1.0,
                 seed: int | None = None, custom=None, dim: int | None = None,
                 transverse: float = 0.5) -> PerturbationState:
    """Smooth localized initial perturbation.

    ``gaussian_exp`` multiplies a Gaussian bump by exp(-lam x1);
    ``gaussian_alg`` by (1 + beta x1)**(-(lam + 2)/2).  A seed draws the bump
    centre in [1, 3] and the component mix in [-1, 1].  ``custom`` is a
    callable ``(x1, y) -> (varphi, psi, zeta)``.  On a strip the bump is
    modulated by 1 + transverse*cos(y) and psi_2 gets a sin(y) component.
    """
    if not amplitude >= 0:
        raise PreconditionError("amplitude must be nonnegative")
    two_d = isinstance(grid, PeriodicStrip)
    dim = dim or (2 if two_d else 1)
    x = _x1(grid).nodes
    mix = np.array([1.0, -0.5, 0.5])
    if seed is not None:
        rng = np.random.default_rng(seed)
        center = float(rng.uniform(1.0, 3.0))
        mix = rng.uniform(-1.0, 1.0, size=3)
    if family == "custom":
        if custom is None:
            raise PreconditionError("custom family needs a callable")
        y = grid.y if two_d else None
        vphi, psi, zeta = custom(x, y)
        fields = [np.broadcast_to(np.asarray(vphi, float), grid.shape if two_d else x.shape).copy()]
        fields += [np.broadcast_to(np.asarray(c, float), fields[0].shape).copy() for c in psi]
        fields.append(np.broadcast_to(np.asarray(zeta, float), fields[0].shape).copy())
        fields = [amplitude * f for f in fields]
    else:
        bump = np.exp(-(((x - center) / width) ** 2))
        if family == "gaussian_exp":
            if not lam > 0:
                raise PreconditionError("gaussian_exp needs lam > 0")
            env = np.exp(-lam * x)
        elif family == "gaussian_alg":
            if not beta > 0:
                raise PreconditionError("gaussian_alg needs beta > 0")
            env = (1.0 + beta * x) ** (-(lam + 2.0) / 2.0)
        else:
            raise PreconditionError(f"unknown initial family {family!r}")
        b = amplitude * env * bump
        if two_d:
            yy = grid.y
            b2 = b[:, None] * (1.0 + transverse * np.cos(yy))[None, :]
            fields = [mix[0] * b2, mix[1] * b2]
            fields.append(transverse * b[:, None] * np.sin(yy)[None, :])
            fields += [np.zeros_like(b2) for _ in range(dim - 2)]
            fields.append(mix[2] * b2)
        else:
            fields = [mix[0] * b, mix[1] * b] + [np.zeros_like(b)] * (dim - 1) + [mix[2] * b]
    fields = np.stack(fields)
    fields[:, -1] = 0.0
    T = _bcast(profile.T_t, grid) + fields[-1]
    if np.any(T <= 0):
        raise PreconditionError("initial temperature T_t + zeta must stay positive")
    system = PerturbationSystem(profile, grid=grid, dim=dim)
    sigma = system.solve_sigma(fields[0])
    return system.to_state(0.0, fields, sigma)


def rhs_eval(state: PerturbationState, profile: StationaryProfile, params: PlasmaParams | None = None,
             scheme: SchemeConfig | None = None) -> np.ndarray:
    system = PerturbationSystem(profile, params, scheme, state.grid, state.dim)
    return system.rhs(state.hyperbolic(), state.sigma)


def step(state: PerturbationState, profile: StationaryProfile, params: PlasmaParams | None = None,
         scheme: SchemeConfig | None = None, dt: float | None = None,
         system: PerturbationSystem | None = None) -> PerturbationState:
    """One Runge-Kutta step with the CFL time step (or ``dt`` if given)."""
    system = system or PerturbationSystem(profile, params, scheme, state.grid, state.dim)
    fields = state.hyperbolic()
    system.check_characteristics(fields)
    if dt is None:
        dt = system.stable_dt(fields)
    new, sigma = system.step_fields(fields, state.sigma, dt)
    return system.to_state(state.t + dt, new, sigma)


# --- trajectory ------------------------------------------------------------

@dataclass
class Trajectory:
    probe_ids: list
    rows: list = field(default_factory=list)
    wall_flux: list = field(default_factory=list)
    steps: int = 0

    @property
    def header(self):
        return ["t"] + [f"norm_{pid}" for pid in self.probe_ids] + ["E0", "min_n", "min_T", "max_speed"]

    def column(self, name) -> np.ndarray:
        return np.array([r[self.header.index(name)] for r in self.rows])

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def norms(self, probe_id) -> np.ndarray:
        return self.column(f"norm_{probe_id}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.header) + "\n")
            for r in self.rows:
                fh.write(",".join(format(float(v), ".17g") for v in r) + "\n")


def read_trajectory_csv(path) -> dict:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {h: data[:, i] for i, h in enumerate(header)}


def _record(traj, system, state, probes, max_speed):
    pr = system.profile
    n = _bcast(pr.n_t, state.grid) * np.exp(state.varphi)
    T = _bcast(pr.T_t, state.grid) + state.zeta
    norms = [weighted_norm(list(state.fields()), state.grid, w) for w in probes]
    traj.rows.append([state.t, *norms, energy_E0(state, pr, system.params),
                      float(n.min()), float(T.min()), max_speed])
    u1 = _bcast(pr.u_t, state.grid) + state.psi[0]
    flux = n[0] * u1[0] - pr.n_t[0] * pr.u_t[0]
    traj.wall_flux.append(float(np.mean(flux)))


def evolve(state0: PerturbationState, profile: StationaryProfile, params: PlasmaParams | None = None,
           scheme: SchemeConfig | None = None, probes=(), callback=None):
    """Step to ``scheme.t_end``, recording diagnostics every ``output_cadence``.

    Steps are shortened so that every output time is hit exactly.  Returns
    ``(final_state, trajectory)``.
    """
    scheme = scheme or SchemeConfig()
    system = PerturbationSystem(profile, params, scheme, state0.grid, state0.dim)
    probes = list(probes)
    traj = Trajectory([w.id for w in probes])
    fields = state0.hyperbolic()
    sigma = state0.sigma
    t = float(state0.t)
    speed = system.check_characteristics(fields)
    state = state0
    _record(traj, system, state, probes, speed)
    n_out = int(math.floor((scheme.t_end - t) / scheme.output_cadence + 1e-9))
    targets = [t + k * scheme.output_cadence for k in range(1, n_out + 1)]
    if not targets or targets[-1] < scheme.t_end - TIME_EPS:
        targets.append(scheme.t_end)
    for target in targets:
        while t < target - TIME_EPS * max(1.0, target):
            speed = system.check_characteristics(fields)
            dt = min(system.stable_dt(fields), target - t)
            fields, sigma = system.step_fields(fields, sigma, dt)
            traj.steps += 1
            t = target if target - (t + dt) <= TIME_EPS * max(1.0, target) else t + dt
        speed = system.check_characteristics(fields)
        state = system.to_state(t, fields, sigma)
        _record(traj, system, state, probes, speed)
        if callback is not None:
            callback(state)
    return state, traj


# --- primitive-variable solver (independent cross-check) -------------------

@dataclass(frozen=True, eq=False)
class PrimitiveState:
    t: float
    n: np.ndarray
    u: np.ndarray
    T: np.ndarray
    phi: np.ndarray


class PrimitiveSystem:
    """Evolves density, velocity, temperature and potential directly (1D).

    Uses the same upwind/centered discretization and Runge-Kutta scheme as
    :class:`PerturbationSystem`; the far-end node is held at the stationary
    values and the potential is solved from lap(phi) = n - exp(-phi).
    """

    def __init__(self, profile: StationaryProfile, scheme: SchemeConfig | None = None):
        self.profile = profile
        self.params = profile.params
        self.scheme = scheme or SchemeConfig()
        self.grid = profile.grid
        self.jac = self.grid.jac
        self.right = (profile.n_t[-1], profile.u_t[-1], profile.T_t[-1])
        self.phi_L = profile.phi_t[-1]

    def from_perturbation(self, state: PerturbationState) -> PrimitiveState:
        pr = self.profile
        n = pr.n_t * np.exp(state.varphi)
        return PrimitiveState(state.t, n, pr.u_t + state.psi[0], pr.T_t + state.zeta,
                              self.solve_phi(n, pr.phi_t + state.sigma))

    def to_perturbation(self, ps: PrimitiveState):
        pr = self.profile
        return (np.log(ps.n) - pr.v_t, ps.u - pr.u_t, ps.T - pr.T_t, ps.phi - pr.phi_t)

    def solve_phi(self, n, guess, tol=1e-11, max_iter=50):
        lo, d, up = laplacian_coefficients(self.grid.nodes)
        phi = np.array(guess, dtype=float)
        phi[0], phi[-1] = self.params.phi_b, self.phi_L
        for _ in range(max_iter):
            F = lo * phi[:-2] + d * phi[1:-1] + up * phi[2:] - n[1:-1] + np.exp(-phi[1:-1])
            if np.max(np.abs(F)) < tol:
                return phi
            ab = np.zeros((3, d.size))
            ab[0, 1:] = up[:-1]
            ab[1] = d - np.exp(-phi[1:-1])
            ab[2, :-1] = lo[1:]
            phi[1:-1] -= solve_banded((1, 1), ab, F)
        raise NonFiniteState("primitive potential solve did not converge")

    def rhs(self, y, phi):
        p = self.params
        sc = self.scheme
        n, u, T = y
        jac = self.jac
        up = lambda q: d_upwind(q, jac, u, sc.spatial_order, sc.limiter)
        du = d_centered(u, jac)
        out = np.empty_like(y)
        out[0] = -u * up(n) - n * du
        out[1] = (-u * up(u) - (p.R / p.m) * (T * d_centered(n, jac) / n + d_centered(T, jac))
                  + d_centered(phi, jac) / p.m)
        out[2] = -u * up(T) - (p.gamma - 1.0) * T * du
        out[:, -1] = 0.0
        return out

    def stable_dt(self, y):
        p = self.params
        c = np.sqrt(p.gamma * p.R * y[2] / p.m)
        cs = char_speeds(y[1], y[2], p)
        rate = np.maximum((np.abs(y[1]) + c), cs.max_abs()) / self.jac
        return self.scheme.cfl / float(np.max(rate))

    def _stage(self, y, phi, dt):
        new = y + dt * self.rhs(y, phi)
        new[:, -1] = self.right
        return new, self.solve_phi(new[0], phi)

    def evolve(self, ps: PrimitiveState, t_end: float) -> PrimitiveState:
        y = np.stack([ps.n, ps.u, ps.T])
        phi = ps.phi
        t = ps.t
        while t < t_end - TIME_EPS * max(1.0, t_end):
            dt = min(self.stable_dt(y), t_end - t)
            y1, p1 = self._stage(y, phi, dt)
            y2, _ = self._stage(y1, p1, dt)
            if self.scheme.rk_stages == 2:
                y = 0.5 * (y + y2)
            else:
                y2 = 0.75 * y + 0.25 * y2
                p2 = self.solve_phi(y2[0], p1)
                y3, _ = self._stage(y2, p2, dt)
                y = y / 3.0 + 2.0 / 3.0 * y3
            y[:, -1] = self.right
            phi = self.solve_phi(y[0], phi)
            t = t_end if t_end - (t + dt) <= TIME_EPS * max(1.0, t_end) else t + dt
        return PrimitiveState(t, y[0], y[1], y[2], phi)
