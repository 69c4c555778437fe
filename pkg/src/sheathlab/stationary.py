"""Planar stationary sheath on a truncated half-line.

The potential follows from the first integral ``phi'^2 / 2 = V(phi)``: the
ODE ``phi' = -sign(phi_b) sqrt(2 V(phi))`` is integrated from the wall until
``|phi|`` drops below a tail threshold, after which the exact solution of the
leading-order Sagdeev potential is used (exponential when V''(0) > 0,
inverse-square in the marginal Bohm case).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (NumericalBranchFailure, PreconditionError, RefusedNoSheath,
                     WindowTooShort)
from .grid import HalfLineGrid
from .model import PlasmaParams, Regime, degenerate_constants
from .sagdeev import SagdeevContext, existence_check, _GL_W, _GL_X

TAIL_FRACTION = 1e-6


def default_length(params: PlasmaParams) -> float:
    """Truncation length making the neglected tail negligible."""
    ctx = SagdeevContext(params)
    if ctx.regime is Regime.DEGENERATE_BOHM:
        if params.phi_b <= 0:
            return 50.0
        dc = degenerate_constants(params)
        return (1e3 - params.phi_b**-0.5) / dc.Gamma
    curv = ctx.V2_at_zero
    if curv <= 0:
        raise PreconditionError("no exponential decay scale for these parameters")
    return 25.0 / math.sqrt(curv)


def default_grid(params: PlasmaParams, M: int = 512) -> HalfLineGrid:
    L = default_length(params)
    if SagdeevContext(params).regime is Regime.DEGENERATE_BOHM:
        # the sheath scale 1/(Gamma sqrt(phi_b)) is tiny next to L
        return HalfLineGrid.geometric(L, M, min(1.02, 1000.0 ** (1.0 / M)))
    return HalfLineGrid.geometric(L, M)


@dataclass(frozen=True, eq=False)
class StationaryProfile:
    grid: HalfLineGrid
    params: PlasmaParams
    n_t: np.ndarray
    u_t: np.ndarray
    T_t: np.ndarray
    phi_t: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    d3phi: np.ndarray
    v_t: np.ndarray
    regime: Regime
    x_switch: float = math.inf
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("n_t", "u_t", "T_t", "phi_t", "dphi", "d2phi", "d3phi", "v_t"):
            getattr(self, name).setflags(write=False)

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def dn(self) -> np.ndarray:
        ctx = SagdeevContext(self.params)
        return self.dphi / ctx.df_dn(self.n_t)

    @property
    def dv(self) -> np.ndarray:
        return self.dn / self.n_t

    @property
    def du(self) -> np.ndarray:
        return -self.params.u_inf * self.dn / self.n_t**2

    @property
    def dT(self) -> np.ndarray:
        p = self.params
        return p.T_inf * (p.gamma - 1.0) * self.n_t ** (p.gamma - 2.0) * self.dn

    def with_fields(self, **changes) -> "StationaryProfile":
        """Copy with some arrays replaced (fault injection in tests)."""
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return StationaryProfile(**d)

    def to_csv(self, path) -> None:
        write_profile_csv(self, path)


def constant_profile(params: PlasmaParams, grid: HalfLineGrid, regime=None) -> StationaryProfile:
    M1 = grid.M + 1
    z = np.zeros(M1)
    return StationaryProfile(
        grid, params, np.ones(M1), np.full(M1, params.u_inf), np.full(M1, params.T_inf),
        z.copy(), z.copy(), z.copy(), z.copy(), z.copy(),
        regime or SagdeevContext(params).regime)


def build_profile(params: PlasmaParams, grid: HalfLineGrid | None = None,
                  tail_fraction: float = TAIL_FRACTION, rtol: float = 1e-12) -> StationaryProfile:
    verdict = existence_check(params)
    if not verdict.exists_monotone:
        raise RefusedNoSheath(
            f"no monotone sheath: regime={verdict.regime.value}, V(phi_b)={verdict.cond_V:.3e}, "
            f"phi_b - f(c_inf)={verdict.cond_f:.3e}")
    if grid is None:
        grid = default_grid(params)
    if params.phi_b == 0.0:
        return constant_profile(params, grid, verdict.regime)

    ctx = SagdeevContext(params)
    phi_b = params.phi_b
    s = math.copysign(1.0, phi_b)
    tau = tail_fraction * abs(phi_b)
    degenerate = verdict.regime is Regime.DEGENERATE_BOHM

    def rhs(_x, y):
        V = float(ctx.V_closed(y[0]))
        if V < 0:
            if V < -1e-14 * abs(y[0]):
                raise NumericalBranchFailure(f"V({y[0]!r}) = {V!r} < 0")
            V = 0.0
        return [-s * math.sqrt(2.0 * V)]

    def hit_tail(_x, y):
        return abs(y[0]) - tau
    hit_tail.terminal = True
    hit_tail.direction = -1

    x = grid.nodes
    sol = solve_ivp(rhs, (0.0, grid.L), [phi_b], method="DOP853", rtol=rtol,
                    atol=1e-6 * tau, events=hit_tail, dense_output=True)
    if sol.status == -1:
        raise NumericalBranchFailure(sol.message)
    x_switch = float(sol.t_events[0][0]) if sol.t_events[0].size else math.inf

    phi = np.empty_like(x)
    body = x <= x_switch
    phi[body] = sol.sol(x[body])[0]
    phi[0] = phi_b
    if not body.all():
        phi_s = float(sol.sol(x_switch)[0])
        slope = math.sqrt(2.0 * float(ctx.V_closed(phi_s)))
        xt = x[~body] - x_switch
        if degenerate:
            g = slope / (2.0 * abs(phi_s) ** 1.5)
            phi[~body] = s * (abs(phi_s) ** -0.5 + g * xt) ** -2.0
        else:
            k = slope / abs(phi_s)
            phi[~body] = phi_s * np.exp(-k * xt)

    V = ctx.V_closed(phi)
    if np.any(V < -1e-14 * np.abs(phi)):
        raise NumericalBranchFailure("Sagdeev potential negative along the profile")
    V = np.maximum(V, 0.0)
    dphi = -s * np.sqrt(2.0 * V)
    d2phi = ctx.dV(phi)
    d3phi = ctx.d2V(phi) * dphi

    w = ctx.log_f_inverse(phi)
    n = np.exp(w)
    u = params.u_inf / n
    T = params.T_inf * n ** (params.gamma - 1.0)
    return StationaryProfile(grid, params, n, u, T, phi, dphi, d2phi, d3phi, w,
                             verdict.regime, x_switch,
                             {"nfev": int(sol.nfev), "tail_threshold": tau})


def laplacian_1d(f, x):
    """Three-point second difference on a nonuniform grid (interior nodes)."""
    h = np.diff(x)
    hl, hr = h[:-1], h[1:]
    return 2.0 * ((f[2:] - f[1:-1]) / hr - (f[1:-1] - f[:-2]) / hl) / (hl + hr)


def quadrature_V_nodes(ctx: SagdeevContext, phi) -> np.ndarray:
    """V at each (monotone) profile value by panel-wise Gauss-Legendre.

    Independent of the closed form: the integrand f^{-1}(eta) - exp(-eta) is
    integrated over consecutive node intervals and accumulated from the node
    nearest zero.
    """
    phi = np.asarray(phi, dtype=float)
    order = np.argsort(np.abs(phi))
    p = phi[order]
    a = np.concatenate([[0.0], p[:-1]])
    b = p
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    eta = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = ctx._integrand(eta.ravel()).reshape(eta.shape)
    panels = half * (vals @ _GL_W)
    out = np.empty_like(phi)
    out[order] = np.cumsum(panels)
    return out


def profile_residuals(profile: StationaryProfile, params: PlasmaParams | None = None) -> dict:
    """Max-norm residuals of the stationary equations and side relations."""
    p = params or profile.params
    ctx = SagdeevContext(p)
    x = profile.x
    n, u, T, phi = profile.n_t, profile.u_t, profile.T_t, profile.phi_t
    dn, du, dT = profile.dn, profile.du, profile.dT
    dpress = p.R * (dT * n + T * dn)
    res = {
        "mass": float(np.max(np.abs(n * u - p.u_inf))),
        "momentum": float(np.max(np.abs(p.m * n * u * du + dpress - n * profile.dphi))),
        "energy": float(np.max(np.abs(u * dT + (p.gamma - 1.0) * T * du))),
        "poisson_closed": float(np.max(np.abs(profile.d2phi - (n - np.exp(-phi))))),
        "poisson_discrete": float(np.max(np.abs(
            laplacian_1d(phi, x) - (n[1:-1] - np.exp(-phi[1:-1]))))),
        "temperature": float(np.max(np.abs(T - p.T_inf * n ** (p.gamma - 1.0)))),
        "branch": float(np.max(np.abs(ctx.f_of_n(n) - phi))),
        "first_integral": float(np.max(np.abs(
            0.5 * profile.dphi**2 - quadrature_V_nodes(ctx, phi)))),
        "bc_left": float(phi[0] - p.phi_b),
        "bc_right": float(phi[-1]),
    }
    return res


@dataclass(frozen=True)
class SpatialDecayFit:
    rate: float
    predicted: float
    amplitude: float
    r_squared: float
    window: tuple

    @property
    def rel_error(self) -> float:
        return abs(self.rate - self.predicted) / self.predicted


def verify_nondegenerate_decay(profile: StationaryProfile, params: PlasmaParams | None = None,
                               lo: float = 1e-8, hi: float = 1e-2, min_points: int = 8) -> SpatialDecayFit:
    """Least-squares exponential rate of |phi| in the far tail."""
    p = params or profile.params
    if profile.regime is not Regime.NONDEGENERATE_BOHM:
        raise PreconditionError("exponential decay check needs the nondegenerate Bohm regime")
    if p.phi_b == 0:
        raise PreconditionError("phi_b must be nonzero")
    rel = np.abs(profile.phi_t) / abs(p.phi_b)
    sel = (rel > lo) & (rel < hi)
    if sel.sum() < min_points:
        raise WindowTooShort(f"only {int(sel.sum())} nodes in the fit window; increase L")
    xs, ys = profile.x[sel], np.log(np.abs(profile.phi_t[sel]))
    slope, icpt = np.polyfit(xs, ys, 1)
    pred = ys - (slope * xs + icpt)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum(pred**2)) / ss_tot if ss_tot > 0 else 1.0
    predicted = math.sqrt(SagdeevContext(p).V2_at_zero)
    return SpatialDecayFit(float(-slope), predicted, float(math.exp(icpt)), r2,
                           (float(xs[0]), float(xs[-1])))


DEGENERATE_U_NAMES = ("-phi", "n-1", "log n", "u/u_inf-1", "(T/T_inf-1)/gamma")


def degenerate_U_fields(profile: StationaryProfile, normalized: bool = False) -> dict:
    """The five comparison quantities with their first x1-derivatives.

    ``normalized=True`` rescales each quantity by its linear coefficient with
    respect to ``-phi`` at the far field, so every entry behaves like ``-phi``
    to leading order.
    """
    p = profile.params
    n = profile.n_t
    out = {
        "-phi": [-profile.phi_t, -profile.dphi, -profile.d2phi, -profile.d3phi],
        "n-1": [n - 1.0, profile.dn],
        "log n": [profile.v_t, profile.dv],
        "u/u_inf-1": [profile.u_t / p.u_inf - 1.0, profile.du / p.u_inf],
        "(T/T_inf-1)/gamma": [(profile.T_t / p.T_inf - 1.0) / p.gamma, profile.dT / (p.T_inf * p.gamma)],
    }
    if normalized:
        ctx = SagdeevContext(p)
        dn0 = -1.0 / float(ctx.df_dn(1.0))  # d(n)/d(-phi) at the far field
        coef = {"-phi": 1.0, "n-1": dn0, "log n": dn0, "u/u_inf-1": -dn0,
                "(T/T_inf-1)/gamma": (p.gamma - 1.0) / p.gamma * dn0}
        out = {k: [a / coef[k] for a in v] for k, v in out.items()}
    return out


def verify_degenerate_asymptotics(profile: StationaryProfile, params: PlasmaParams | None = None,
                                  delta0: float = 0.05, normalized: bool = False) -> dict:
    """sup over nodes of |d^i U * G^(i+2) + c_i| for each comparison quantity.

    Returns ``{name: [sup_0, sup_1, ...]}``.
    """
    p = params or profile.params
    if profile.regime is not Regime.DEGENERATE_BOHM:
        raise PreconditionError("degenerate asymptotics need the marginal Bohm regime")
    if not 0 < p.phi_b <= delta0:
        raise PreconditionError(f"need 0 < phi_b <= {delta0}")
    dc = degenerate_constants(p)
    G = dc.G(profile.x)
    report = {}
    for name, derivs in degenerate_U_fields(profile, normalized).items():
        report[name] = [float(np.max(np.abs(d * G ** (i + 2) + dc.c[i])))
                        for i, d in enumerate(derivs)]
    return report


PROFILE_HEADER = ("x1", "n", "u", "T", "phi", "dphi", "d2phi", "d3phi")


def write_profile_csv(profile: StationaryProfile, path) -> None:
    cols = (profile.x, profile.n_t, profile.u_t, profile.T_t, profile.phi_t,
            profile.dphi, profile.d2phi, profile.d3phi)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for row in zip(*cols):
            w.writerow([format(float(v), ".17g") for v in row])


def read_profile_csv(path) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {k: np.asarray(data[k]) for k in data.dtype.names}
