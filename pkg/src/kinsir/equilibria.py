"""Inverse-Gamma quasi-equilibria and the time-derivative bound coefficients."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaincc, gammaln

from .core import Density, Grid, MomentState, Params
from .errors import DomainError


class QuasiEquilibriumWarning(UserWarning):
    """Quasi-equilibrium parameters outside the finite-mean regime."""


@dataclass(frozen=True)
class InverseGamma:
    """Density proportional to ``x**-(nu+1) * exp(-omega/x)``."""

    nu: float
    omega: float

    def __post_init__(self):
        if not (self.nu > 0 and self.omega > 0 and math.isfinite(self.nu) and math.isfinite(self.omega)):
            raise DomainError(f"inverse Gamma needs nu > 0, omega > 0 (got nu={self.nu}, omega={self.omega})")

    @property
    def mean(self) -> float:
        return self.omega / (self.nu - 1.0) if self.nu > 1 else math.inf

    @property
    def variance(self) -> float:
        if self.nu <= 2:
            return math.inf
        return self.omega**2 / ((self.nu - 1.0) ** 2 * (self.nu - 2.0))

    @property
    def mean_inverse(self) -> float:
        return self.nu / self.omega

    @property
    def mode(self) -> float:
        return self.omega / (self.nu + 1.0)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise DomainError("inverse Gamma density is defined for x > 0 only")
        nu, om = self.nu, self.omega
        return nu * math.log(om) - gammaln(nu) - (nu + 1.0) * np.log(x) - om / x

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x > 0, gammaincc(self.nu, self.omega / np.where(x > 0, x, 1.0)), 0.0)

    def tail_mass(self, x_max: float) -> float:
        """Probability mass beyond ``x_max``."""
        return float(gammainc(self.nu, self.omega / x_max))

    def cell_averages(self, grid: Grid) -> Density:
        """Exact cell averages from CDF increments, renormalized on the grid."""
        c = self.cdf(grid.edges)
        return Density.normalized(np.diff(c) / grid.dx, grid)


def inverse_gamma_pdf(x, ig: InverseGamma):
    return ig.pdf(x)


def quasi_equilibrium(compartment: str, means: MomentState, params: Params) -> InverseGamma:
    """Inverse-Gamma law annihilating the flux of one compartment at frozen means."""
    p = params
    m_s, m_i, m_r = means.means
    if compartment == "S":
        nu = 1.0 + 2.0 * p.beta / p.sigma_s
        omega = 2.0 * p.alpha / p.sigma_s * m_r / m_i
    elif compartment == "I":
        nu = 1.0 + 2.0 * (p.gamma * p.theta - p.beta * m_s) / (p.sigma_i * m_s)
        omega = 2.0 * p.gamma * (p.theta - 1.0) * m_i / (p.sigma_i * m_s)
        if p.beta * m_s >= p.gamma * p.theta:
            warnings.warn(
                f"infected quasi-equilibrium has nu={nu:.4g} <= 1 (beta*m_S >= gamma*theta): unbounded mean",
                QuasiEquilibriumWarning,
                stacklevel=2,
            )
    elif compartment == "R":
        if p.sigma_r == 0.0:
            raise DomainError("recovered compartment has no quasi-equilibrium when sigma_r = 0")
        nu = 1.0 + 2.0 * p.alpha / p.sigma_r
        omega = 2.0 * p.gamma * m_i / p.sigma_r
    else:
        raise DomainError(f"unknown compartment {compartment!r}")
    if nu <= 0.0:
        raise DomainError(f"quasi-equilibrium of {compartment} is not integrable (nu={nu:.4g})")
    return InverseGamma(nu, omega)


def wealth_equilibrium(sigma: float, lam: float, mu: float) -> InverseGamma:
    """Stationary law of the constant-coefficient equation with drift lam*x - mu."""
    if sigma <= 0 or lam <= 0 or mu <= 0:
        raise DomainError("sigma, lambda and mu must be positive")
    return InverseGamma(1.0 + 2.0 * lam / sigma, 2.0 * mu / sigma)


# Bernoulli-number coefficients of the asymptotic expansion of psi
_PSI_ASYMPTOTIC = (
    1.0 / 12,
    -1.0 / 120,
    1.0 / 252,
    -1.0 / 240,
    1.0 / 132,
    -691.0 / 32760,
    1.0 / 12,
)


def digamma(z: float) -> float:
    """Digamma function for real z > 0."""
    z = float(z)
    if not z > 0 or not math.isfinite(z):
        raise DomainError(f"digamma implemented for finite z > 0 only, got {z}")
    shift = 0.0
    while z < 8.0:
        shift -= 1.0 / z
        z += 1.0
    inv2 = 1.0 / (z * z)
    series = 0.0
    term = inv2
    for c in _PSI_ASYMPTOTIC:
        series += c * term
        term *= inv2
    return shift + math.log(z) - 0.5 / z - series


def dt_bound_coefficients(ig: InverseGamma) -> tuple[float, float]:
    """Coefficients (A, B) with int |d/dt pdf| dx <= |nu'| A + |omega'| B."""
    nu, om = ig.nu, ig.omega
    if nu <= 1.0:
        raise DomainError(f"bound requires nu > 1, got {nu}")
    a = abs(math.log(om) - digamma(nu)) + 1.0 + nu / (math.e * om) + om / (nu - 1.0)
    b = 2.0 * nu / om
    return a, b
