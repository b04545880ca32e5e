"""Shared domain types: model parameters, the trait grid, densities and moments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from functools import cached_property

import numpy as np

from .errors import ConfigError, DomainError, NumericalError

COMPARTMENTS = ("S", "I", "R")

MASS_TOL = 1e-10
VARIANCE_CLAMP = -1e-12


@dataclass(frozen=True)
class Params:
    """Model constants of the kinetic SIR system.

    ``sigma_r`` defaults to ``alpha`` (the choice used in the reference
    experiments), which honours ``sigma_r = 0`` when ``alpha = 0``.
    ``eps`` records the quasi-invariant scaling already applied; physical
    parameters carry ``eps = 1``.
    """

    alpha: float
    beta: float
    gamma: float
    theta: float
    sigma_s: float
    sigma_i: float
    sigma_r: float | None = None
    eps: float = 1.0

    def __post_init__(self):
        if self.sigma_r is None:
            object.__setattr__(self, "sigma_r", self.alpha)
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ConfigError(f"parameter {f.name} must be finite, got {value!r}")
            object.__setattr__(self, f.name, float(value))
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.gamma <= 0.0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.theta <= 1.0:
            raise ConfigError(f"theta must exceed 1, got {self.theta}")
        if self.gamma * self.theta >= 1.0:
            raise ConfigError(
                f"gamma*theta must be < 1 for positive recovery transitions, got {self.gamma * self.theta}"
            )
        if self.sigma_s <= 0.0 or self.sigma_i <= 0.0:
            raise ConfigError("sigma_s and sigma_i must be positive")
        if self.sigma_r < 0.0:
            raise ConfigError(f"sigma_r must be nonnegative, got {self.sigma_r}")
        if self.alpha == 0.0 and self.sigma_r != 0.0:
            raise ConfigError("sigma_r must vanish when alpha = 0")
        if self.alpha > 0.0 and self.sigma_r >= 2.0 * self.alpha:
            raise ConfigError(
                f"sigma_r must be < 2*alpha when alpha > 0 (sigma_r={self.sigma_r}, alpha={self.alpha})"
            )
        if not 0.0 < self.eps <= 1.0:
            raise ConfigError(f"eps must lie in (0, 1], got {self.eps}")

    def regime_warnings(self) -> list[str]:
        """Soft conditions for uniformly bounded variances (not errors)."""
        out = []
        if self.sigma_s >= 2.0 * self.beta:
            out.append("sigma_s >= 2*beta: susceptible variance unbounded")
        if self.sigma_i >= 2.0 * self.beta * (self.theta - 1.0):
            out.append("sigma_i >= 2*beta*(theta-1): infected variance unbounded")
        return out

    def replace(self, **changes) -> "Params":
        return replace(self, **changes)


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred mesh on ``[0, x_max]``."""

    x_max: float
    n_cells: int

    def __post_init__(self):
        if not (self.x_max > 0.0 and math.isfinite(self.x_max)):
            raise ConfigError(f"x_max must be positive and finite, got {self.x_max}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 16:
            raise ConfigError(f"n_cells must be an integer >= 16, got {self.n_cells}")
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "x_max", float(self.x_max))

    @property
    def dx(self) -> float:
        return self.x_max / self.n_cells

    @cached_property
    def centers(self) -> np.ndarray:
        x = (np.arange(self.n_cells) + 0.5) * self.dx
        x.flags.writeable = False
        return x

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.arange(self.n_cells + 1) * self.dx
        e.flags.writeable = False
        return e

    def cell_index(self, x):
        """Index of the cell containing ``x`` (clipped to the domain)."""
        idx = np.floor(np.asarray(x) / self.dx).astype(np.int64)
        return np.clip(idx, 0, self.n_cells - 1)


@dataclass(frozen=True, eq=False)
class Density:
    """Nonnegative cell averages with unit mass on a :class:`Grid`."""

    values: np.ndarray
    grid: Grid
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n_cells,):
            raise ConfigError(f"density has shape {v.shape}, grid expects ({self.grid.n_cells},)")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        if self.check:
            if not np.all(np.isfinite(v)):
                raise NumericalError("density contains non-finite values")
            if v.min() < 0.0:
                raise NumericalError(f"density has negative values (min {v.min():.3e})")
            mass = self.mass
            if abs(mass - 1.0) > MASS_TOL:
                raise NumericalError(f"density mass {mass!r} differs from 1 by more than {MASS_TOL}")

    @classmethod
    def normalized(cls, values, grid: Grid) -> "Density":
        v = np.asarray(values, dtype=float)
        total = v.sum() * grid.dx
        if not total > 0.0:
            raise NumericalError("cannot normalize a density with zero mass")
        return cls(v / total, grid)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.dx)

    def l1_distance(self, other: "Density") -> float:
        return float(np.abs(self.values - other.values).sum() * self.grid.dx)


@dataclass(frozen=True)
class MomentState:
    """Means and variances of the three compartments at time ``t``."""

    m_s: float
    m_i: float
    m_r: float
    v_s: float = 0.0
    v_i: float = 0.0
    v_r: float = 0.0
    t: float = 0.0

    @property
    def means(self) -> tuple[float, float, float]:
        return (self.m_s, self.m_i, self.m_r)

    @property
    def variances(self) -> tuple[float, float, float]:
        return (self.v_s, self.v_i, self.v_r)

    @property
    def total_mass(self) -> float:
        return self.m_s + self.m_i + self.m_r

    def as_array(self) -> np.ndarray:
        return np.array([self.m_s, self.m_i, self.m_r, self.v_s, self.v_i, self.v_r])

    @classmethod
    def from_array(cls, arr, t=0.0) -> "MomentState":
        a = [float(v) for v in arr]
        return cls(*a, t=float(t))

    def mean(self, compartment: str) -> float:
        return self.means[COMPARTMENTS.index(compartment)]

    def var(self, compartment: str) -> float:
        return self.variances[COMPARTMENTS.index(compartment)]


def moment(density: Density, k: int = 1) -> float:
    """Midpoint-rule moment of order ``k``."""
    if k < 0 or int(k) != k:
        raise DomainError(f"moment order must be a nonnegative integer, got {k}")
    x = density.grid.centers
    return float(np.dot(x**k, density.values) * density.grid.dx)


def variance(density: Density) -> float:
    m1 = moment(density, 1)
    v = moment(density, 2) - m1 * m1
    if v < 0.0:
        if v < VARIANCE_CLAMP * max(1.0, m1 * m1):
            raise NumericalError(f"negative variance {v:.3e}")
        v = 0.0
    return v


def make_delta_density(x0: float, grid: Grid) -> Density:
    """All mass in the cell containing ``x0``."""
    if not 0.0 <= x0 <= grid.x_max:
        raise DomainError(f"point {x0} outside [0, {grid.x_max}]")
    v = np.zeros(grid.n_cells)
    v[grid.cell_index(x0)] = 1.0 / grid.dx
    return Density(v, grid)


def make_uniform_density(center: float, variance: float, grid: Grid) -> Density:
    """Cell averages of the uniform law with given mean and variance."""
    if variance < 0.0:
        raise DomainError(f"variance must be nonnegative, got {variance}")
    half = math.sqrt(3.0 * variance)
    lo, hi = center - half, center + half
    if lo < 0.0:
        raise DomainError(f"uniform support [{lo:.4g}, {hi:.4g}] extends below x=0")
    if hi > grid.x_max:
        raise DomainError(f"uniform support [{lo:.4g}, {hi:.4g}] extends beyond x_max={grid.x_max}")
    if half == 0.0:
        return make_delta_density(center, grid)
    e = grid.edges
    overlap = np.clip(np.minimum(e[1:], hi) - np.maximum(e[:-1], lo), 0.0, None)
    return Density.normalized(overlap / (hi - lo) / grid.dx, grid)


def density_from_logpdf(logpdf_values, grid: Grid) -> Density:
    """Normalize unnormalized log-density samples at the cell centres."""
    lv = np.asarray(logpdf_values, dtype=float)
    finite = np.isfinite(lv)
    if not finite.any():
        raise NumericalError("log-density is nowhere finite on the grid")
    shifted = np.where(finite, lv - lv[finite].max(), -np.inf)
    return Density.normalized(np.exp(shifted), grid)


def moments_of(densities, t: float = 0.0) -> MomentState:
    """MomentState extracted from three densities ordered (S, I, R)."""
    ms = [moment(d, 1) for d in densities]
    vs = [variance(d) for d in densities]
    return MomentState(*ms, *vs, t=t)
