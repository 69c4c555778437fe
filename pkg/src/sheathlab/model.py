"""Physical parameters, Bohm regime classification and characteristic speeds."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import PreconditionError

#: Relative tolerance used to detect the marginal Bohm case.
DEGENERATE_RTOL = 1e-12

#: Bracket for the critical weight exponent.
LAMBDA0_BRACKET = (4.0 + 1e-9, 5.5694)


@dataclass(frozen=True)
class PlasmaParams:
    """Nondimensional constants of the ion fluid.

    The far-field density is fixed to one (quasi-neutrality at infinity).
    """

    m: float = 1.0
    gamma: float = 5.0 / 3.0
    R: float = 1.0
    T_inf: float = 1.0
    u_inf: float = -2.0
    phi_b: float = 0.05
    n_inf: float = 1.0

    def __post_init__(self):
        for name in ("m", "gamma", "R", "T_inf", "u_inf", "phi_b", "n_inf"):
            if not math.isfinite(getattr(self, name)):
                raise PreconditionError(f"{name} must be finite")
        if self.m <= 0:
            raise PreconditionError("m must be positive")
        if self.gamma <= 1:
            raise PreconditionError("gamma must exceed 1")
        if self.R <= 0:
            raise PreconditionError("R must be positive")
        if self.T_inf <= 0:
            raise PreconditionError("T_inf must be positive")
        if self.u_inf >= 0:
            raise PreconditionError("u_inf must be negative")
        if self.n_inf != 1.0:
            raise PreconditionError("n_inf is fixed at 1")

    @property
    def sound_threshold(self) -> float:
        """gamma R T_inf / m, the lower edge of the no-solution band."""
        return self.gamma * self.R * self.T_inf / self.m

    @property
    def bohm_threshold(self) -> float:
        """(gamma R T_inf + 1) / m, the Bohm speed squared."""
        return (self.gamma * self.R * self.T_inf + 1.0) / self.m

    def replace(self, **changes) -> "PlasmaParams":
        d = asdict(self)
        d.update(changes)
        return PlasmaParams(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def degenerate(cls, m=1.0, gamma=5.0 / 3.0, R=1.0, T_inf=1.0, phi_b=0.01):
        """Parameters sitting exactly on the Bohm threshold."""
        u = -math.sqrt((gamma * R * T_inf + 1.0) / m)
        return cls(m=m, gamma=gamma, R=R, T_inf=T_inf, u_inf=u, phi_b=phi_b)


class Regime(enum.Enum):
    SUBSONIC_EXISTENCE = "SubsonicExistence"
    NO_SOLUTION_BAND = "NoSolutionBand"
    DEGENERATE_BOHM = "DegenerateBohm"
    NONDEGENERATE_BOHM = "NondegenerateBohm"

    @property
    def admits_solution(self) -> bool:
        return self is not Regime.NO_SOLUTION_BAND

    @property
    def is_bohm(self) -> bool:
        return self in (Regime.DEGENERATE_BOHM, Regime.NONDEGENERATE_BOHM)


def classify_regime(params: PlasmaParams, rtol: float = DEGENERATE_RTOL) -> Regime:
    u2 = params.u_inf**2
    bohm = params.bohm_threshold
    if abs(u2 - bohm) <= rtol * bohm:
        return Regime.DEGENERATE_BOHM
    if u2 > bohm:
        return Regime.NONDEGENERATE_BOHM
    if u2 <= params.sound_threshold:
        return Regime.SUBSONIC_EXISTENCE
    return Regime.NO_SOLUTION_BAND


@dataclass(frozen=True)
class CharacteristicSpeeds:
    lam1: np.ndarray | float
    lam2: np.ndarray | float
    lam3: np.ndarray | float
    lam_extra: np.ndarray | float

    def max_abs(self):
        return np.maximum.reduce([np.abs(self.lam1), np.abs(self.lam2),
                                  np.abs(self.lam3), np.abs(self.lam_extra)])

    def all_negative(self) -> bool:
        return bool(np.all(np.asarray(self.lam3) < 0) and np.all(np.asarray(self.lam_extra) < 0)
                    and np.all(np.asarray(self.lam2) < 0))


def char_speeds(u1, T, params: PlasmaParams) -> CharacteristicSpeeds:
    """Characteristic speeds in the normal direction at velocity ``u1``, temperature ``T``.

    Works elementwise on arrays.
    """
    u1 = np.asarray(u1, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise PreconditionError("temperature must be positive")
    m = params.m
    rad = np.sqrt((m - 1.0) ** 2 * u1**2 + 4.0 * params.gamma * params.R * T)
    lam1 = 0.5 * ((m + 1.0) * u1 - rad)
    lam3 = 0.5 * ((m + 1.0) * u1 + rad)
    out = CharacteristicSpeeds(lam1, u1.copy(), lam3, m * u1)
    if out.lam1.ndim == 0:
        out = CharacteristicSpeeds(float(lam1), float(u1), float(lam3), float(m * u1))
    return out


def lambda0_cubic(lam, gamma=None):
    """Left-hand side of the critical-exponent cubic.

    ``gamma=None`` gives the limiting equation in which 2/(1+gamma) is
    replaced by one.
    """
    coef = 1.0 if gamma is None else 2.0 / (1.0 + gamma)
    return lam * (lam - 1.0) * (lam - 2.0) - 12.0 * (coef * lam + 2.0)


def bisect(func, lo, hi, atol=1e-10, max_iter=200):
    """Plain bisection on a sign-changing bracket."""
    flo, fhi = func(lo), func(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise PreconditionError(f"no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = func(mid)
        if fmid == 0.0 or 0.5 * (hi - lo) < atol:
            return mid
        if np.sign(fmid) == np.sign(flo):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_lambda0(gamma: float | None = None, atol: float = 1e-10) -> float:
    """Critical weight exponent for the degenerate stability estimate.

    Pass ``gamma=None`` for the limiting cubic (gamma -> 1).  Its root lies just
    below the upper end of the bracket, which therefore serves every gamma.
    """
    if gamma is not None and not gamma > 1.0:
        raise PreconditionError("gamma must exceed 1")
    lo, hi = LAMBDA0_BRACKET
    return bisect(lambda x: lambda0_cubic(x, gamma), lo, hi, atol=atol)


@dataclass(frozen=True)
class DegenerateConstants:
    Gamma: float
    c0: float
    c1: float
    c2: float
    c3: float
    phi_b: float

    @property
    def c(self):
        return (self.c0, self.c1, self.c2, self.c3)

    def G(self, x1):
        """Affine comparison function Gamma*x1 + phi_b^(-1/2)."""
        return self.Gamma * np.asarray(x1, dtype=float) + self.phi_b**-0.5


def degenerate_constants(params: PlasmaParams) -> DegenerateConstants:
    if not params.phi_b > 0:
        raise PreconditionError("degenerate asymptotics need phi_b > 0")
    k = (params.gamma**2 + params.gamma) * params.R * params.T_inf + 2.0
    Gamma = math.sqrt(k / 12.0)
    return DegenerateConstants(
        Gamma=Gamma,
        c0=1.0,
        c1=-2.0 * Gamma,
        c2=6.0 * Gamma**2,
        c3=-24.0 * Gamma**3,
        phi_b=params.phi_b,
    )
