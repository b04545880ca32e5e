"""Convergence diagnostics: Fourier transforms, homogeneous Sobolev norms, energy distance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .core import COMPARTMENTS, Density, Grid, MomentState, Params, density_from_logpdf
from .errors import ConfigError, DomainError, NumericalError

XI_MIN = 1e-4
XI_MAX = 1e3
XI_NODES = 4096


@dataclass(frozen=True, eq=False)
class FourierSamples:
    xi: np.ndarray
    values: np.ndarray

    def at_negative(self):
        """Values at -xi, by conjugate symmetry of a real density."""
        return np.conj(self.values)


def fourier_transform(f: Density, xi):
    """Midpoint-rule transform sum_i f_i exp(-i xi x_i) dx; scalar or array ``xi``."""
    x = f.grid.centers
    w = f.values * f.grid.dx
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.empty(xi_arr.shape, dtype=complex)
    for lo in range(0, len(xi_arr), 256):
        block = xi_arr[lo : lo + 256]
        out[lo : lo + 256] = np.exp(-1j * np.outer(block, x)) @ w
    return out[0] if np.ndim(xi) == 0 else out


def fourier_samples(f: Density, xi_min=XI_MIN, xi_max=XI_MAX, n=XI_NODES) -> FourierSamples:
    xi = np.geomspace(xi_min, xi_max, n)
    return FourierSamples(xi, fourier_transform(f, xi))


def _check_p(p):
    if not 0.5 < p < 1.5:
        raise DomainError(f"p must lie in (1/2, 3/2), got {p}")


def _check_pair(f: Density, g: Density):
    if f.grid != g.grid:
        raise ConfigError("densities live on different grids")


def sobolev_minus_p(
    f: Density,
    g: Density,
    p: float,
    xi_min: float = XI_MIN,
    xi_max: float = XI_MAX,
    n_nodes: int = XI_NODES,
    return_cutoff: bool = False,
):
    """Squared homogeneous H_{-p} distance, 2 * int_{xi_min}^{xi_max} xi^{-2p} |f^ - g^|^2.

    The integral is taken in log xi with the trapezoid rule.  With
    ``return_cutoff`` an estimate of the neglected tails is returned too:
    below ``xi_min`` the integrand behaves like |mean difference|^2 xi^{2-2p},
    above ``xi_max`` the last decade is extrapolated with its own decay.
    """
    _check_p(p)
    _check_pair(f, g)
    diff = Density(f.values - g.values, f.grid, check=False)
    xi = np.geomspace(xi_min, xi_max, n_nodes)
    d2 = np.abs(fourier_transform(diff, xi)) ** 2
    u = np.log(xi)
    integrand = xi ** (1.0 - 2.0 * p) * d2
    value = 2.0 * float(np.trapezoid(integrand, u))
    if not return_cutoff:
        return value
    x = f.grid.centers
    dm = float(np.dot(x, diff.values) * f.grid.dx)
    low = 2.0 * dm * dm * xi_min ** (3.0 - 2.0 * p) / (3.0 - 2.0 * p)
    decade = xi >= xi_max / 10.0
    high = 2.0 * float(np.trapezoid(integrand[decade], u[decade])) if decade.sum() > 1 else 0.0
    return value, low + high


def energy_constant(p: float) -> float:
    """C(p) with energy_distance = C(p) * int_R |xi|^{-2p} |f^ - g^|^2 (transform without 2*pi factors)."""
    _check_p(p)
    a = 2.0 * p - 1.0
    return a * 2.0**a * gamma_fn(p) / (2.0 * math.sqrt(math.pi) * gamma_fn(1.5 - p))


def printed_energy_constant(p: float) -> float:
    """(2p-1)/sqrt(2) * 2^{2p-1} Gamma(p) / Gamma(3/2-p).

    Kept for comparison only: it exceeds :func:`energy_constant` by the
    factor sqrt(2*pi) for the unnormalized transform used here.
    """
    _check_p(p)
    a = 2.0 * p - 1.0
    return a / math.sqrt(2.0) * 2.0**a * gamma_fn(p) / gamma_fn(1.5 - p)


def _kernel_apply(v: np.ndarray, grid: Grid, p: float) -> np.ndarray:
    """(K v)_i = sum_j |x_i - x_j|^{2p-1} v_j by direct summation (Toeplitz kernel)."""
    n = len(v)
    k = np.abs(np.arange(-(n - 1), n) * grid.dx) ** (2.0 * p - 1.0)
    return np.convolve(v, k)[n - 1 : 2 * n - 1]


def energy_distance(f: Density, g: Density, p: float) -> float:
    """2<f,K g> - <f,K f> - <g,K g> with kernel |x-y|^{2p-1}.

    Evaluated as -<f-g, K (f-g)> which is the same double sum without the
    cancellation between three large terms.
    """
    _check_p(p)
    _check_pair(f, g)
    h = (f.values - g.values) * f.grid.dx
    e = -float(np.dot(h, _kernel_apply(h, f.grid, p)))
    if e < 0.0:
        if e < -1e-8:
            raise NumericalError(f"energy distance {e:.3e} is negative beyond round-off")
        e = 0.0
    return e


@dataclass
class DecayReport:
    times: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray = None
    bound_rate: float | None = None
    slack: float = 0.05
    satisfied: np.ndarray = None

    @property
    def ok(self) -> bool:
        return self.satisfied is None or bool(np.all(self.satisfied))

    @property
    def worst_ratio(self) -> float:
        """Largest (d/dt z) / (-rate z) shortfall; values >= 1 - slack pass."""
        r = -self.derivatives / (self.bound_rate * self.values[1:-1])
        return float(r.min())


def decay_bound_rate(sigma: float, lam: float, p: float) -> float:
    """(2p-1)[sigma (3-2p)/4 + lambda] for the constant-coefficient equation."""
    return (2.0 * p - 1.0) * (sigma * (3.0 - 2.0 * p) / 4.0 + lam)


def decay_rate_check(times, values, rate: float | None = None, slack: float = 0.05) -> DecayReport:
    """Centered finite-difference check of dz/dt <= -rate z (+ slack * rate * z).

    Without ``rate`` the series is only recorded (no assertion).
    """
    t = np.asarray(times, dtype=float)
    z = np.asarray(values, dtype=float)
    if rate is None or len(t) < 3:
        return DecayReport(t, z)
    dz = (z[2:] - z[:-2]) / (t[2:] - t[:-2])
    bound = -rate * z[1:-1] + slack * rate * z[1:-1]
    return DecayReport(t, z, dz, rate, slack, dz <= bound)


def quasi_equilibrium_density(compartment: str, means: MomentState, params: Params, grid: Grid) -> Density:
    """Inverse-Gamma shaped quasi-equilibrium restricted to the grid.

    Uses the formal log-density at cell centres, which stays meaningful on
    the bounded domain even when the shape parameter is not positive.
    """
    p = params
    m_s, m_i, m_r = means.means
    if compartment == "S":
        nu = 1.0 + 2.0 * p.beta / p.sigma_s
        omega = 2.0 * p.alpha / p.sigma_s * m_r / m_i
    elif compartment == "I":
        nu = 1.0 + 2.0 * (p.gamma * p.theta - p.beta * m_s) / (p.sigma_i * m_s)
        omega = 2.0 * p.gamma * (p.theta - 1.0) * m_i / (p.sigma_i * m_s)
    elif compartment == "R":
        if p.sigma_r == 0:
            raise DomainError("recovered compartment has no quasi-equilibrium when sigma_r = 0")
        nu = 1.0 + 2.0 * p.alpha / p.sigma_r
        omega = 2.0 * p.gamma * m_i / p.sigma_r
    else:
        raise DomainError(f"unknown compartment {compartment!r}")
    x = grid.centers
    return density_from_logpdf(-(nu + 1.0) * np.log(x) - omega / x, grid)


@dataclass
class EnergySeries:
    ps: tuple
    times: list = field(default_factory=list)
    values: dict = field(default_factory=dict)  # (compartment, p) -> list

    def array(self, compartment: str, p: float) -> np.ndarray:
        return np.asarray(self.values[(compartment, p)])

    def total(self, p: float) -> np.ndarray:
        return sum(self.array(c, p) for c in COMPARTMENTS if (c, p) in self.values)


def energy_to_quasi_equilibrium(snapshots, ps=(5 / 8, 3 / 4, 7 / 8), means_source: str = "density", ode=None) -> EnergySeries:
    """E^p(f_J, f_J^q) along FP snapshots.

    ``means_source='density'`` builds f^q from moments of the densities,
    ``'ode'`` from an ODE trajectory (``ode.at(t)``).
    """
    series = EnergySeries(tuple(ps))
    for st in snapshots:
        if means_source == "density":
            means = st.moments()
        elif means_source == "ode":
            means = ode.at(st.t)
        else:
            raise ConfigError(f"unknown means source {means_source!r}")
        series.times.append(st.t)
        for c, dens in zip(COMPARTMENTS, st.densities):
            if c == "R" and st.params.sigma_r == 0:
                continue
            q = quasi_equilibrium_density(c, means, st.params, st.grid)
            for p in ps:
                series.values.setdefault((c, p), []).append(energy_distance(dens, q, p))
    return series
