"""Bernoulli function f(n), its equilibrium-branch inverse and the Sagdeev potential.

Internally the density is carried as ``w = log n`` so that quantities near the
far-field state (n = 1, phi = 0) keep full relative precision.  In that
variable f is strictly convex, which makes safeguarded Newton monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import BranchExhausted, PreconditionError
from .model import PlasmaParams, Regime, classify_regime

# 16-point Gauss-Legendre rule on [-1, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)

DOMAIN_SLACK = 1e-14

# below this |log n| the Sagdeev potential is summed from its Taylor series in
# log n; the closed form cancels to O(phi^2) (O(phi^3) in the marginal case)
SERIES_RADIUS = 0.2
SERIES_ORDER = 40


def _exp_series(s):
    """Coefficients of exp(S(w)) - 1 given those of S with S(0) = 0."""
    K = s.size
    e = np.zeros(K)
    e[0] = 1.0
    k = np.arange(K)
    for j in range(1, K):
        e[j] = np.dot(k[1:j + 1] * s[1:j + 1], e[j - 1::-1][:j]) / j
    e[0] = 0.0
    return e


@dataclass(frozen=True)
class SagdeevContext:
    params: PlasmaParams

    @cached_property
    def _a(self) -> float:
        p = self.params
        return p.gamma * p.R * p.T_inf / (p.gamma - 1.0)

    @cached_property
    def _b(self) -> float:
        p = self.params
        return 0.5 * p.m * p.u_inf**2

    @cached_property
    def w_crit(self) -> float:
        p = self.params
        return math.log(p.m * p.u_inf**2 / (p.gamma * p.R * p.T_inf)) / (p.gamma + 1.0)

    @property
    def c_inf(self) -> float:
        """Only critical point of f."""
        return math.exp(self.w_crit)

    @cached_property
    def f_at_c_inf(self) -> float:
        return float(self.f_of_w(self.w_crit))

    @property
    def lower_branch(self) -> bool:
        """True when the equilibrium n = 1 lies on (0, c_inf]."""
        return self.w_crit >= 0.0

    @cached_property
    def _series(self):
        """Taylor coefficients in w = log n of f(w) and V(w)."""
        p = self.params
        g = p.gamma
        K = SERIES_ORDER
        k = np.arange(K)
        fact = np.cumprod(np.concatenate([[1.0], np.arange(1, K)]))

        def expm1_lin(c):  # coefficients of expm1(c w)
            out = c**k / fact
            out[0] = 0.0
            return out

        f = self._a * expm1_lin(g - 1.0) + self._b * expm1_lin(-2.0)
        V = (p.R * p.T_inf * expm1_lin(g) + p.m * p.u_inf**2 * expm1_lin(-1.0)
             + _exp_series(-f))
        return f, V

    def _series_eval(self, coef, w, deriv=0):
        c = coef
        for _ in range(deriv):
            c = np.polynomial.polynomial.polyder(c)
        return np.polynomial.polynomial.polyval(w, c)

    @cached_property
    def regime(self) -> Regime:
        return classify_regime(self.params)

    # -- f and its derivatives in the log variable ---------------------------
    def f_of_w(self, w):
        g = self.params.gamma
        return self._a * np.expm1((g - 1.0) * w) + self._b * np.expm1(-2.0 * w)

    def df_dw(self, w):
        g = self.params.gamma
        return self._a * (g - 1.0) * np.exp((g - 1.0) * w) - 2.0 * self._b * np.exp(-2.0 * w)

    def f_of_n(self, n):
        n = np.asarray(n, dtype=float)
        if np.any(n <= 0):
            raise PreconditionError("density must be positive")
        out = self._f_direct(n)
        return float(out) if out.ndim == 0 else out

    def _f_direct(self, n):
        # expm1/log1p near n = 1 (n - 1 is exact there); plain powers elsewhere,
        # where taking the log first would amplify rounding in 1/n^2
        g = self.params.gamma
        near = np.abs(n - 1.0) < 0.5
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.log1p(n - 1.0)
            f_near = self._a * np.expm1((g - 1.0) * w) + self._b * np.expm1(-2.0 * w)
            f_far = self._a * (n ** (g - 1.0) - 1.0) + self._b * (1.0 / (n * n) - 1.0)
        return np.where(near, f_near, f_far)

    def df_dn(self, n):
        p = self.params
        n = np.asarray(n, dtype=float)
        return p.gamma * p.R * p.T_inf * n ** (p.gamma - 2.0) - p.m * p.u_inf**2 * n**-3.0

    # -- inverse on the equilibrium branch ----------------------------------
    def log_f_inverse(self, phi, rtol=1e-13, max_iter=100):
        """``log f^{-1}(phi)`` on the branch containing (n, phi) = (1, 0)."""
        phi = np.asarray(phi, dtype=float)
        scalar = phi.ndim == 0
        phi = np.atleast_1d(phi).copy()
        if not np.all(np.isfinite(phi)):
            raise PreconditionError("potential must be finite")
        fmin = self.f_at_c_inf
        if np.any(phi < fmin - DOMAIN_SLACK):
            bad = float(phi[phi < fmin - DOMAIN_SLACK][0])
            raise BranchExhausted(
                f"phi={bad!r} is below f(c_inf)={fmin!r}; no density on the equilibrium branch")
        phi = np.maximum(phi, fmin)
        g = self.params.gamma
        wc = self.w_crit
        if self.lower_branch:
            far = -0.5 * np.log((phi + self._a + self._b) / self._b) - 0.1
            lo, hi = np.minimum(far, wc), np.full_like(phi, wc)
        else:
            far = np.log1p(np.maximum(phi + self._b, 0.0) / self._a) / (g - 1.0) + 0.1
            lo, hi = np.full_like(phi, wc), np.maximum(far, wc)
        w = np.where(np.abs(phi) < 0.1, 0.0, 0.5 * (lo + hi))
        w = np.clip(w, lo, hi)
        active = np.ones(phi.shape, dtype=bool)
        for _ in range(max_iter):
            if not active.any():
                break
            wa = w[active]
            r = self.f_of_w(wa) - phi[active]
            hit = r == 0
            # keep the bracket: residual sign tells which side the root is on
            dec = self.lower_branch
            above = (r > 0) if dec else (r < 0)
            lo_a, hi_a = lo[active], hi[active]
            lo_a = np.where(above, wa, lo_a)
            hi_a = np.where(above, hi_a, wa)
            d = self.df_dw(wa)
            with np.errstate(divide="ignore", invalid="ignore"):
                wn = wa - r / d
            bad = ~np.isfinite(wn) | (wn < lo_a) | (wn > hi_a)
            wn = np.where(bad, 0.5 * (lo_a + hi_a), wn)
            wn = np.where(hit, wa, wn)
            step = np.abs(wn - wa)
            lo[active], hi[active] = lo_a, hi_a
            w[active] = wn
            done = (step <= rtol * np.maximum(np.abs(wn), 1e-300)) | hit | (hi_a - lo_a <= 0)
            idx = np.flatnonzero(active)
            active[idx[done]] = False
        return float(w[0]) if scalar else w

    def f_inverse(self, phi, rtol=1e-13):
        """Density n in the equilibrium branch with f(n) = phi."""
        w = self.log_f_inverse(phi, rtol=rtol)
        n = np.exp(np.atleast_1d(w))
        n = self._polish(n, np.atleast_1d(np.asarray(phi, dtype=float)))
        return float(n[0]) if np.ndim(phi) == 0 else n

    def _polish(self, n, phi):
        # one Newton step in n, then the best of n and its two float neighbours
        with np.errstate(divide="ignore", invalid="ignore"):
            step = (self._f_direct(n) - phi) / self.df_dn(n)
        cand = np.where(np.isfinite(step) & (np.abs(step) < 1e-8 * n), n - step, n)
        trial = np.stack([cand, np.nextafter(cand, 0.0), np.nextafter(cand, np.inf)])
        trial = np.where(self._on_branch(trial), trial, cand)
        res = np.abs(self._f_direct(trial) - phi)
        return np.take_along_axis(trial, np.argmin(res, axis=0)[None], axis=0)[0]

    def _on_branch(self, n):
        c = self.c_inf
        return n <= c if self.lower_branch else n >= c

    # -- Sagdeev potential ---------------------------------------------------
    def dV(self, phi):
        """V'(phi) = f^{-1}(phi) - exp(-phi)."""
        phi = np.asarray(phi, dtype=float)
        w = self.log_f_inverse(phi)
        out = np.expm1(w) - np.expm1(-phi)
        small = np.abs(w) < SERIES_RADIUS
        if np.any(small):
            fc, Vc = self._series
            ws = w[small] if np.ndim(w) else w
            val = self._series_eval(Vc, ws, 1) / self._series_eval(fc, ws, 1)
            out = np.where(small, val, out) if np.ndim(out) else val
        return out

    def d2V(self, phi):
        """V''(phi) = 1/f'(f^{-1}(phi)) + exp(-phi)."""
        phi = np.asarray(phi, dtype=float)
        w = self.log_f_inverse(phi)
        n = np.exp(w)
        out = 1.0 / self.df_dn(n) + np.exp(-phi)
        small = np.abs(w) < SERIES_RADIUS
        if np.any(small):
            fc, Vc = self._series
            ws = w[small] if np.ndim(w) else w
            f1, f2 = self._series_eval(fc, ws, 1), self._series_eval(fc, ws, 2)
            V1, V2 = self._series_eval(Vc, ws, 1), self._series_eval(Vc, ws, 2)
            val = (V2 * f1 - V1 * f2) / f1**3
            out = np.where(small, val, out) if np.ndim(out) else val
        return out

    def V_closed(self, phi):
        """Sagdeev potential from its antiderivative.

        Substituting eta = f(s) turns the integral of f^{-1} into that of
        s f'(s), which is elementary.
        """
        p = self.params
        phi = np.asarray(phi, dtype=float)
        w = self.log_f_inverse(phi)
        out = (p.R * p.T_inf * np.expm1(p.gamma * w) + p.m * p.u_inf**2 * np.expm1(-w)
               + np.expm1(-phi))
        small = np.abs(w) < SERIES_RADIUS
        if np.any(small):
            val = self._series_eval(self._series[1], w[small] if np.ndim(w) else w)
            out = np.where(small, val, out) if np.ndim(out) else val
        return out

    def V_of_phi(self, phi, atol=1e-12, max_depth=40):
        """Sagdeev potential by adaptive 16-point Gauss-Legendre quadrature."""
        phi = float(phi)
        if phi == 0.0:
            return 0.0
        lo = min(0.0, phi)
        if lo < self.f_at_c_inf - DOMAIN_SLACK:
            raise BranchExhausted(f"segment [0, {phi!r}] leaves the equilibrium branch")
        total = _adaptive_gl(self._integrand, 0.0, phi, atol, max_depth)
        return total

    def _integrand(self, eta):
        return np.expm1(self.log_f_inverse(eta)) - np.expm1(-eta)

    @property
    def V2_at_zero(self) -> float:
        """Curvature of V at the far-field state."""
        p = self.params
        return 1.0 - 1.0 / (p.m * p.u_inf**2 - p.gamma * p.R * p.T_inf)


def _gl_panel(func, a, b):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return half * np.dot(_GL_W, func(mid + half * _GL_X))


def _adaptive_gl(func, a, b, atol, max_depth):
    whole = _gl_panel(func, a, b)
    stack = [(a, b, whole, atol, 0)]
    total = 0.0
    while stack:
        a0, b0, est, tol, depth = stack.pop()
        m0 = 0.5 * (a0 + b0)
        left = _gl_panel(func, a0, m0)
        right = _gl_panel(func, m0, b0)
        if abs(left + right - est) <= tol or depth >= max_depth:
            total += left + right
        else:
            stack.append((m0, b0, right, 0.5 * tol, depth + 1))
            stack.append((a0, m0, left, 0.5 * tol, depth + 1))
    return float(total)


def f_of_n(n, ctx: SagdeevContext):
    return ctx.f_of_n(n)


def f_inverse(phi, ctx: SagdeevContext):
    return ctx.f_inverse(phi)


def V_of_phi(phi, ctx: SagdeevContext):
    return ctx.V_of_phi(phi)


@dataclass(frozen=True)
class ExistenceVerdict:
    exists_monotone: bool
    cond_V: float
    cond_f: float
    regime: Regime
    phi_b: float = float("nan")

    @property
    def trivial(self) -> bool:
        """Boundary potential zero: the constant far-field state."""
        return self.phi_b == 0.0

    def as_dict(self) -> dict:
        return {"exists_monotone": self.exists_monotone, "cond_V": self.cond_V,
                "cond_f": self.cond_f, "regime": self.regime.value, "phi_b": self.phi_b}


def existence_check(params: PlasmaParams) -> ExistenceVerdict:
    ctx = SagdeevContext(params)
    regime = ctx.regime
    cond_f = params.phi_b - ctx.f_at_c_inf
    if cond_f >= 0:
        cond_V = ctx.V_of_phi(params.phi_b)
    else:
        cond_V = float("nan")
    ok = regime.admits_solution and cond_f >= 0 and cond_V >= 0
    return ExistenceVerdict(bool(ok), float(cond_V), float(cond_f), regime, float(params.phi_b))
