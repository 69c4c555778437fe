"""Weighted Sobolev norms, the zeroth-order energy density, decay fits and the
positivity check of the weighted-energy quadratic form.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .errors import FitUnderdetermined, PreconditionError
from .grid import HalfLineGrid, PeriodicStrip
from .model import PlasmaParams, Regime, classify_regime, degenerate_constants, solve_lambda0

EXP_CLIP = 700.0


class WeightClippedWarning(RuntimeWarning):
    """An exponential weight overflowed and was clipped."""


@dataclass(frozen=True)
class WeightSpec:
    """Weight ``(1 + beta x1)**alpha`` (algebraic) or ``exp(lam x1)`` (exponential)."""

    kind: str = "algebraic"
    alpha: float = 0.0
    beta: float = 1.0
    lam: float = 0.0
    order: int = 0

    def __post_init__(self):
        if self.kind not in ("algebraic", "exponential"):
            raise PreconditionError(f"unknown weight kind {self.kind!r}")
        if self.kind == "algebraic" and not self.beta > 0:
            raise PreconditionError("algebraic weight needs beta > 0")
        if self.kind == "exponential" and not self.lam > 0:
            raise PreconditionError("exponential weight needs lam > 0")
        if self.order < 0 or int(self.order) != self.order:
            raise PreconditionError("order must be a nonnegative integer")

    @classmethod
    def algebraic(cls, alpha, beta, order=0):
        return cls("algebraic", alpha=float(alpha), beta=float(beta), order=int(order))

    @classmethod
    def exponential(cls, lam, order=0):
        return cls("exponential", lam=float(lam), order=int(order))

    @property
    def id(self) -> str:
        if self.kind == "algebraic":
            return f"alg_a{self.alpha:g}_b{self.beta:g}_H{self.order}"
        return f"exp_l{self.lam:g}_H{self.order}"

    def weight(self, x1):
        x1 = np.asarray(x1, dtype=float)
        if self.kind == "algebraic":
            return (1.0 + self.beta * x1) ** self.alpha
        expo = self.lam * x1
        if np.any(expo > EXP_CLIP):
            warnings.warn(f"exponential weight clipped at exp({EXP_CLIP})", WeightClippedWarning)
            expo = np.minimum(expo, EXP_CLIP)
        return np.exp(expo)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta,
                "lam": self.lam, "order": self.order}


def _x1_grid(grid):
    return grid.x1 if isinstance(grid, PeriodicStrip) else grid


def _derivatives(f, grid, order):
    """All mixed partial derivatives up to ``order`` (one array per multi-index)."""
    x = _x1_grid(grid).nodes
    if isinstance(grid, PeriodicStrip):
        hy = grid.hy
        out = []
        d1 = [f]
        for _ in range(order):
            d1.append(np.gradient(d1[-1], x, axis=0, edge_order=2))
        for a in range(order + 1):
            g = d1[a]
            for b in range(order + 1 - a):
                out.append(g)
                g = (np.roll(g, -1, axis=1) - np.roll(g, 1, axis=1)) / (2.0 * hy)
        return out
    out = [f]
    for _ in range(order):
        out.append(np.gradient(out[-1], x, edge_order=2))
    return out


def _integrate(density, grid):
    x = _x1_grid(grid).nodes
    if isinstance(grid, PeriodicStrip):
        return trapezoid(density.sum(axis=1) * grid.hy, x)
    return trapezoid(density, x)


def weighted_norm(fields, grid, spec: WeightSpec) -> float:
    """sqrt of the integral of W * sum over |s| <= order of (d^s f)^2.

    ``fields`` is one array or a sequence of arrays (components summed).
    """
    if isinstance(fields, np.ndarray) and fields.ndim == (2 if isinstance(grid, PeriodicStrip) else 1):
        fields = [fields]
    x = _x1_grid(grid).nodes
    W = spec.weight(x)
    if isinstance(grid, PeriodicStrip):
        W = W[:, None]
    total = 0.0
    for f in fields:
        f = np.asarray(f, dtype=float)
        dens = sum(d * d for d in _derivatives(f, grid, spec.order))
        total += _integrate(W * dens, grid)
    return math.sqrt(max(total, 0.0))


def energy_E0(state, profile, params: PlasmaParams | None = None) -> float:
    """Integral of the zeroth-order energy density of the perturbation."""
    p = params or profile.params
    n_t = profile.n_t
    T_t = profile.T_t
    grid = state.grid
    if isinstance(grid, PeriodicStrip):
        n_t, T_t = n_t[:, None], T_t[:, None]
    T = T_t + state.zeta
    if np.any(T <= 0):
        raise PreconditionError("temperature must stay positive")
    psi2 = sum(c * c for c in state.psi)
    dens = (0.5 * n_t * p.R * T * state.varphi**2 + 0.5 * n_t * p.m * psi2
            + n_t * p.R / (2.0 * (p.gamma - 1.0) * T) * state.zeta**2)
    return float(_integrate(dens, grid))


@dataclass(frozen=True)
class DecayFit:
    model: str
    rate: float
    amplitude: float
    r_squared: float
    window: tuple
    beta: float | None = None
    n_points: int = 0
    flagged: bool = False

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        if self.model == "algebraic":
            return self.amplitude * (1.0 + self.beta * t) ** (-self.rate)
        return self.amplitude * np.exp(-self.rate * t)


MIN_FIT_POINTS = 8


def fit_decay(series, model: str = "exponential", beta: float | None = None,
              window: tuple | None = None) -> DecayFit:
    """Least-squares decay law through a time series.

    ``series`` is a sequence of ``(t, value)`` pairs or a ``(t, values)`` pair
    of arrays.  The algebraic model regresses log value on log(1 + beta t),
    the exponential one on t.  The default window is the last 80% of the
    time span.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 2 and arr.shape[0] != 2:
        t, y = arr[:, 0], arr[:, 1]
    elif arr.ndim == 2 and arr.shape[0] == 2:
        t, y = arr
    else:
        raise PreconditionError("series must be (t, value) pairs")
    if model not in ("algebraic", "exponential"):
        raise PreconditionError(f"unknown decay model {model!r}")
    if model == "algebraic" and not (beta and beta > 0):
        raise PreconditionError("algebraic fit needs beta > 0")
    if window is None:
        t_end = float(np.max(t))
        window = (0.2 * t_end, t_end)
    sel = (t >= window[0]) & (t <= window[1]) & np.isfinite(y)
    flagged = bool(np.any(sel & (y <= 0)))
    sel &= y > 0
    if sel.sum() < MIN_FIT_POINTS:
        raise FitUnderdetermined(f"{int(sel.sum())} usable points, need {MIN_FIT_POINTS}")
    ts, ys = t[sel], np.log(y[sel])
    xs = np.log1p(beta * ts) if model == "algebraic" else ts
    slope, icpt = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + icpt)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(model, float(-slope), float(math.exp(icpt)), min(max(r2, 0.0), 1.0),
                    (float(ts[0]), float(ts[-1])), beta, int(sel.sum()), flagged)


def theorem_rate(lam: float, eps: float, regime: Regime) -> float:
    """Algebraic time-decay exponent of the squared weighted norm.

    (lam - eps) in the nondegenerate case, (lam - eps)/3 in the marginal one.
    """
    if not 0 < eps <= lam:
        raise PreconditionError("need 0 < eps <= lam")
    if regime is Regime.DEGENERATE_BOHM:
        return (lam - eps) / 3.0
    if regime is Regime.NONDEGENERATE_BOHM:
        return lam - eps
    raise PreconditionError("decay exponents are stated only under the Bohm criterion")


# --- quadratic form ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QFormReport:
    x1: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    q4: np.ndarray
    q5: np.ndarray
    B: np.ndarray
    S: np.ndarray
    flags44: np.ndarray
    flags45: np.ndarray
    flags46: np.ndarray
    det_expr: np.ndarray
    min_eig: np.ndarray
    epsilon: float
    beta: float

    @property
    def min_eig_scaled(self) -> np.ndarray:
        return self.min_eig * self.B**2

    @property
    def min_scaled_eig(self) -> float:
        return float(np.min(self.min_eig_scaled))

    @property
    def c_margin(self) -> float:
        """Empirical constant: min over nodes of -det_expr * B^2."""
        return float(np.min(-self.det_expr * self.B**2))

    @property
    def conditions_ok(self) -> np.ndarray:
        return self.flags44 & self.flags45 & self.flags46

    @property
    def eigen_ok(self) -> np.ndarray:
        return self.min_eig > 0

    @property
    def oracle_agrees(self) -> bool:
        return bool(np.all(self.conditions_ok == self.eigen_ok))

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.conditions_ok))

    def matrices(self, u_abs) -> np.ndarray:
        return qform_matrices(self.q1, self.q2, self.q3, self.q4, self.q5, u_abs)

    def to_csv(self, path) -> None:
        header = ("x1", "q1", "q2", "q3", "q4", "q5", "B", "S", "min_eig_scaled",
                  "ok44", "ok45", "ok46")
        cols = (self.x1, self.q1, self.q2, self.q3, self.q4, self.q5, self.B, self.S,
                self.min_eig_scaled)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(self.x1.size):
                w.writerow([format(float(c[i]), ".17g") for c in cols]
                           + [int(self.flags44[i]), int(self.flags45[i]), int(self.flags46[i])])


def qform_matrices(q1, q2, q3, q4, q5, u_abs):
    """Symmetric 3x3 matrices of the form in (varphi, psi_1, zeta), one per node."""
    A = np.zeros(q1.shape + (3, 3))
    A[..., 0, 0] = u_abs * q1
    A[..., 1, 1] = q3 / u_abs
    A[..., 2, 2] = u_abs * q4
    A[..., 0, 1] = A[..., 1, 0] = 0.5 * q2
    A[..., 2, 1] = A[..., 1, 2] = 0.5 * q5
    return A


def qform_coefficients(x1, epsilon, beta, params: PlasmaParams):
    p = params
    Gam = degenerate_constants(p).Gamma
    RT = p.R * p.T_inf
    g = p.gamma
    e = epsilon
    B = x1 + 1.0 / beta
    S = B / (x1 + 1.0 / (Gam * math.sqrt(p.phi_b)))
    k = B**-2 / Gam**2
    q1 = 0.5 * e * RT + k * (0.5 * (1.0 - RT) * e * S**2 - 0.5 * Gam**2 * e * (e - 1.0) * (e - 2.0)
                             + (g * RT - 1.0) * S**3)
    q2 = -RT * e + k * (2.0 * e * RT * S**2 + 2.0 * (1.0 - g * RT) * S**3)
    q3 = 0.5 * e * g * RT + k * (0.5 * (1.0 - RT) * e * S**2 + (3.0 * g * RT + 3.0) * S**3)
    c4 = p.R / ((g - 1.0) * p.T_inf)
    q4 = 0.5 * e * c4 + k * (-0.5 * e * c4 * S**2 + g * c4 * S**3)
    q5 = -e * p.R + 2.0 * e * p.R * k * S**2
    return q1, q2, q3, q4, q5, B, S


def qform_check(epsilon: float, beta: float, params: PlasmaParams, grid,
                lam: float | None = None, check_bounds: bool = True) -> QFormReport:
    """Evaluate the coefficient functions and the three positivity conditions.

    ``check_bounds=False`` skips the exponent/beta preconditions so that the
    failure beyond the critical exponent can be probed.
    """
    p = params
    if classify_regime(p) is not Regime.DEGENERATE_BOHM:
        raise PreconditionError("quadratic-form check needs the marginal Bohm regime")
    if not p.phi_b > 0:
        raise PreconditionError("need phi_b > 0")
    if not beta > 0:
        raise PreconditionError("need beta > 0")
    Gam = degenerate_constants(p).Gamma
    if check_bounds:
        lam = epsilon if lam is None else lam
        lam0 = solve_lambda0(p.gamma)
        if not 0 < epsilon:
            raise PreconditionError("failed 0 < epsilon")
        if not epsilon <= lam:
            raise PreconditionError("failed epsilon <= lambda")
        if not lam < lam0:
            raise PreconditionError(f"failed lambda < lambda0 = {lam0:.6f}")
        if beta > Gam * math.sqrt(p.phi_b) * (1.0 + 1e-12):
            raise PreconditionError("failed beta <= Gamma sqrt(phi_b)")
    x1 = _x1_grid(grid).nodes if not isinstance(grid, np.ndarray) else np.asarray(grid, float)
    q1, q2, q3, q4, q5, B, S = qform_coefficients(x1, epsilon, beta, p)
    flags44 = (q1 > 0) & (q3 > 0) & (q4 > 0)
    flags45 = (q2**2 - 4.0 * q1 * q3 < 0) & (q5**2 - 4.0 * q3 * q4 < 0)
    det_expr = q1 * q5**2 + q4 * q2**2 - 4.0 * q1 * q3 * q4
    flags46 = det_expr < 0
    A = qform_matrices(q1, q2, q3, q4, q5, abs(p.u_inf))
    min_eig = np.linalg.eigvalsh(A)[:, 0]
    return QFormReport(x1, q1, q2, q3, q4, q5, B, S, flags44, flags45, flags46, det_expr,
                       min_eig, float(epsilon), float(beta))
