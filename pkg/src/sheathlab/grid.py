"""Truncated half-line grids and their tensor extension with a periodic direction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError

MIN_CELLS = 64
MAX_RATIO = 1.02


@dataclass(frozen=True, eq=False)
class HalfLineGrid:
    """Nodes ``0 = x_0 < x_1 < ... < x_M = L``.

    ``M`` counts cells, so there are ``M + 1`` nodes.  A geometric grid is the
    image of a uniform computational coordinate ``xi = 0..M`` under
    ``x = L (r**xi - 1) / (r**M - 1)``; ``jac`` holds dx/dxi at the nodes and is
    what the finite-difference operators divide by.
    """

    nodes: np.ndarray
    stretching: str = "uniform"
    ratio: float = 1.0
    jac: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < MIN_CELLS + 1:
            raise PreconditionError(f"grid needs at least {MIN_CELLS} cells")
        if x[0] != 0.0:
            raise PreconditionError("first node must be exactly 0")
        if not np.all(np.diff(x) > 0):
            raise PreconditionError("nodes must be strictly increasing")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)
        if self.jac is None:
            object.__setattr__(self, "jac", np.gradient(x))
        self.jac.setflags(write=False)

    @property
    def M(self) -> int:
        return self.nodes.size - 1

    @property
    def L(self) -> float:
        return float(self.nodes[-1])

    @property
    def x(self) -> np.ndarray:
        return self.nodes

    @property
    def h(self) -> np.ndarray:
        """Cell widths."""
        return np.diff(self.nodes)

    @classmethod
    def uniform(cls, L: float, M: int) -> "HalfLineGrid":
        x = np.linspace(0.0, L, M + 1)
        x[-1] = L
        return cls(x, "uniform", 1.0, np.full(M + 1, L / M))

    @classmethod
    def geometric(cls, L: float, M: int, ratio: float | None = None) -> "HalfLineGrid":
        """Geometrically stretched grid, finest at the wall.

        With ``ratio=None`` the ratio is chosen so the last cell is ten times
        the first, capped at 1.02.
        """
        if ratio is None:
            ratio = min(MAX_RATIO, 10.0 ** (1.0 / M))
        if ratio <= 1.0:
            return cls.uniform(L, M)
        xi = np.arange(M + 1, dtype=float)
        lr = math.log(ratio)
        denom = math.expm1(M * lr)
        x = L * np.expm1(xi * lr) / denom
        x[0], x[-1] = 0.0, L
        jac = L * lr * np.exp(xi * lr) / denom
        return cls(x, "geometric", float(ratio), jac)

    @classmethod
    def from_spec(cls, L: float, M: int, stretching: str = "geometric", ratio=None):
        if stretching == "uniform":
            return cls.uniform(L, M)
        if stretching == "geometric":
            return cls.geometric(L, M, ratio)
        raise PreconditionError(f"unknown stretching {stretching!r}")

    def refined(self) -> "HalfLineGrid":
        """Twice as many cells; every old node is kept."""
        if self.stretching == "uniform":
            return HalfLineGrid.uniform(self.L, 2 * self.M)
        if self.stretching == "geometric":
            return HalfLineGrid.geometric(self.L, 2 * self.M, math.sqrt(self.ratio))
        mids = 0.5 * (self.nodes[1:] + self.nodes[:-1])
        x = np.empty(2 * self.M + 1)
        x[0::2], x[1::2] = self.nodes, mids
        return HalfLineGrid(x, "custom")

    def describe(self) -> dict:
        return {"L": self.L, "M": self.M, "stretching": self.stretching, "ratio": self.ratio}


@dataclass(frozen=True, eq=False)
class PeriodicStrip:
    """Tensor grid: half-line in x1 times a periodic interval of length ``Ly``."""

    x1: HalfLineGrid
    ny: int = 32
    Ly: float = 2.0 * math.pi

    def __post_init__(self):
        if self.ny < 4:
            raise PreconditionError("need at least 4 transverse points")

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.hy

    @property
    def shape(self) -> tuple:
        return (self.x1.M + 1, self.ny)
