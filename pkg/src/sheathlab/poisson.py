"""Newton solver for the nonlinear Poisson equation of the potential perturbation.

Given the density-log perturbation ``varphi`` and the stationary profile, find
``sigma`` with

    lap(sigma) = n_t (exp(varphi) - 1) - exp(-phi_t) (exp(-sigma) - 1)

and ``sigma = 0`` at both ends of the truncated half-line (periodic in x2 for
the strip).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .diagnostics import WeightSpec, weighted_norm
from .errors import NoConvergence, NonFiniteState, PreconditionError
from .grid import HalfLineGrid, PeriodicStrip

DEFAULT_TOL = 1e-11
MAX_NEWTON = 50


def laplacian_coefficients(x):
    """Sub-, main- and super-diagonal of the three-point second difference at interior nodes."""
    h = np.diff(x)
    hl, hr = h[:-1], h[1:]
    s = 2.0 / (hl + hr)
    lo = s / hl
    up = s / hr
    return lo, -(lo + up), up


@dataclass(frozen=True, eq=False)
class PoissonProblem:
    grid: HalfLineGrid | PeriodicStrip
    v_t: np.ndarray
    phi_t: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        g = self.grid
        M1 = (g.x1 if isinstance(g, PeriodicStrip) else g).M + 1
        for name in ("v_t", "phi_t"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (M1,):
                raise PreconditionError(f"{name} must match the x1 grid")
            if not np.all(np.isfinite(a)):
                raise NonFiniteState(f"{name} has non-finite entries")
            object.__setattr__(self, name, a)
        src = np.asarray(self.source, dtype=float)
        shape = g.shape if isinstance(g, PeriodicStrip) else (M1,)
        if src.shape != shape:
            raise PreconditionError(f"source shape {src.shape} != grid shape {shape}")
        if not np.all(np.isfinite(src)):
            raise NonFiniteState("source has non-finite entries")
        object.__setattr__(self, "source", src)

    @classmethod
    def from_profile(cls, profile, source, grid=None):
        return cls(grid or profile.grid, profile.v_t, profile.phi_t, source)

    @property
    def is_2d(self) -> bool:
        return isinstance(self.grid, PeriodicStrip)

    @property
    def x1(self) -> HalfLineGrid:
        return self.grid.x1 if self.is_2d else self.grid

    def _coeffs(self):
        """Broadcastable n_t*(e^varphi - 1) and e^{-phi_t}."""
        n_t = np.exp(self.v_t)
        e_phi = np.exp(-self.phi_t)
        if self.is_2d:
            n_t, e_phi = n_t[:, None], e_phi[:, None]
        return n_t * np.expm1(self.source), e_phi

    def residual(self, sigma) -> np.ndarray:
        """F(sigma) at interior nodes (zero rows at the Dirichlet ends)."""
        rho, e_phi = self._coeffs()
        return self._lap(sigma) - rho + e_phi * np.expm1(-sigma)

    def _lap(self, sigma):
        lo, d, up = laplacian_coefficients(self.x1.nodes)
        out = np.zeros_like(sigma)
        if self.is_2d:
            lo, d, up = lo[:, None], d[:, None], up[:, None]
        out[1:-1] = lo * sigma[:-2] + d * sigma[1:-1] + up * sigma[2:]
        if self.is_2d:
            hy2 = self.grid.hy**2
            out[1:-1] += (np.roll(sigma, 1, axis=1) - 2.0 * sigma + np.roll(sigma, -1, axis=1))[1:-1] / hy2
        return out


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    sigma: np.ndarray
    iterations: int
    final_residual: float


def _interior_max(r):
    return float(np.max(np.abs(r[1:-1]))) if r.shape[0] > 2 else 0.0


def _newton_step_1d(problem, sigma, F, diag):
    lo, d, up = laplacian_coefficients(problem.x1.nodes)
    n = d.size
    ab = np.zeros((3, n))
    ab[0, 1:] = up[:-1]
    ab[1] = d - diag[1:-1]
    ab[2, :-1] = lo[1:]
    delta = np.zeros_like(sigma)
    delta[1:-1] = solve_banded((1, 1), ab, -F[1:-1], check_finite=False)
    return delta


def _newton_step_2d(problem, sigma, F, diag):
    """Approximate Newton step: the reaction term is averaged over x2 so that
    the periodic Fourier modes decouple into one tridiagonal solve each."""
    lo, d, up = laplacian_coefficients(problem.x1.nodes)
    ny = problem.grid.ny
    hy = problem.grid.hy
    dbar = diag[1:-1].mean(axis=1)
    rhs = np.fft.rfft(-F[1:-1], axis=1)
    k = np.arange(rhs.shape[1])
    eig_y = -(2.0 - 2.0 * np.cos(2.0 * np.pi * k / ny)) / hy**2
    ab = np.zeros((3, d.size))
    ab[0, 1:] = up[:-1]
    ab[2, :-1] = lo[1:]
    out = np.empty_like(rhs)
    for j in range(rhs.shape[1]):
        ab[1] = d - dbar + eig_y[j]
        out[:, j] = solve_banded((1, 1), ab, rhs[:, j], check_finite=False)
    delta = np.zeros_like(sigma)
    delta[1:-1] = np.fft.irfft(out, n=ny, axis=1)
    return delta


def poisson_solve(problem: PoissonProblem, guess=None, tol: float = DEFAULT_TOL,
                  max_iter: int = MAX_NEWTON) -> PoissonSolution:
    """Damped Newton iteration; the line search halves the step until the residual drops."""
    shape = problem.source.shape
    sigma = np.zeros(shape) if guess is None else np.array(guess, dtype=float)
    if sigma.shape != shape:
        raise PreconditionError("guess shape does not match the grid")
    sigma[0] = 0.0
    sigma[-1] = 0.0
    _, e_phi = problem._coeffs()

    F = problem.residual(sigma)
    res = _interior_max(F)
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise NoConvergence(f"Newton stalled at residual {res:.3e} after {it} iterations")
        diag = e_phi * np.exp(-sigma)
        if not (np.all(diag > 0) and np.all(np.isfinite(diag))):
            raise NonFiniteState("Jacobian diagonal lost positivity")
        if problem.is_2d:
            delta = _newton_step_2d(problem, sigma, F, diag)
        else:
            delta = _newton_step_1d(problem, sigma, F, diag)
        alpha = 1.0
        while True:
            trial = sigma + alpha * delta
            Ft = problem.residual(trial)
            rt = _interior_max(Ft)
            if np.isfinite(rt) and (rt < res or alpha < 1e-6):
                break
            alpha *= 0.5
        sigma, F, res = trial, Ft, rt
        it += 1
        if not math.isfinite(res):
            raise NonFiniteState("non-finite Poisson residual")
    return PoissonSolution(sigma, it, res)


def elliptic_estimate_check(problem: PoissonProblem, solution: PoissonSolution,
                            weight: WeightSpec) -> float | None:
    """Ratio of the order-2 weighted norm of sigma to the order-0 weighted norm of the source.

    Returns ``None`` when the source vanishes (ratio undefined).
    """
    w0 = WeightSpec(weight.kind, weight.alpha, weight.beta, weight.lam, 0)
    w2 = WeightSpec(weight.kind, weight.alpha, weight.beta, weight.lam, 2)
    denom = weighted_norm(problem.source, problem.grid, w0)
    if denom == 0.0:
        return None
    return weighted_norm(solution.sigma, problem.grid, w2) / denom
