"""Closed macroscopic system: SIR means with reinfection plus the variance closure."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import MomentState, Params
from .errors import ConfigError, InfeasibleParametersError, NonFiniteStateError


def sir_rhs(state: MomentState, params: Params) -> tuple[float, float, float]:
    m_s, m_i, m_r = state.means
    infection = params.beta * m_s * m_i
    recovery = params.gamma * m_i
    loss = params.alpha * m_r
    return (loss - infection, infection - recovery, recovery - loss)


def variance_rhs(state: MomentState, params: Params) -> tuple[float, float, float]:
    p = params
    m_s, m_i, m_r = state.means
    v_s, v_i, v_r = state.variances
    return (
        (p.sigma_s - 2.0 * p.beta) * m_i * v_s + p.sigma_s * m_i * m_s * m_s,
        ((p.sigma_i + 2.0 * p.beta) * m_s - 2.0 * p.gamma * p.theta) * v_i + p.sigma_i * m_s * m_i * m_i,
        (p.sigma_r - 2.0 * p.alpha) * v_r + p.sigma_r * m_r * m_r,
    )


def _rhs(y, p: Params):
    # y = (m_s, m_i, m_r, v_s, v_i, v_r) as plain floats; kept scalar for speed
    m_s, m_i, m_r, v_s, v_i, v_r = y
    inf = p.beta * m_s * m_i
    rec = p.gamma * m_i
    loss = p.alpha * m_r
    return (
        loss - inf,
        inf - rec,
        rec - loss,
        (p.sigma_s - 2.0 * p.beta) * m_i * v_s + p.sigma_s * m_i * m_s * m_s,
        ((p.sigma_i + 2.0 * p.beta) * m_s - 2.0 * p.gamma * p.theta) * v_i + p.sigma_i * m_s * m_i * m_i,
        (p.sigma_r - 2.0 * p.alpha) * v_r + p.sigma_r * m_r * m_r,
    )


def rk4_step(y, p: Params, h: float):
    """One classical Runge-Kutta step of the six-dimensional moment system."""
    k1 = _rhs(y, p)
    k2 = _rhs([a + 0.5 * h * b for a, b in zip(y, k1)], p)
    k3 = _rhs([a + 0.5 * h * b for a, b in zip(y, k2)], p)
    k4 = _rhs([a + h * b for a, b in zip(y, k3)], p)
    return [a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]


@dataclass(frozen=True, eq=False)
class MacroTrajectory:
    """Moment states at output times; ``values`` columns follow MomentState order."""

    times: np.ndarray
    values: np.ndarray
    params: Params

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k) -> MomentState:
        return MomentState.from_array(self.values[k], t=self.times[k])

    @property
    def final(self) -> MomentState:
        return self[-1]

    @property
    def states(self) -> list[MomentState]:
        return [self[k] for k in range(len(self))]

    def at(self, t: float) -> MomentState:
        """Linear interpolation between stored samples."""
        row = [np.interp(t, self.times, self.values[:, j]) for j in range(6)]
        return MomentState.from_array(row, t=t)


def integrate(init: MomentState, params: Params, t_end: float, dt: float) -> MacroTrajectory:
    """Fixed-step RK4 from ``init.t`` to ``init.t + t_end``, sampled every ``dt``."""
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if not t_end >= 0:
        raise ConfigError(f"t_end must be nonnegative, got {t_end}")
    n_full = int(math.floor(t_end / dt + 1e-9))
    rest = t_end - n_full * dt
    steps = [dt] * n_full
    if rest > 1e-12 * max(1.0, t_end):
        steps.append(rest)

    y = [float(v) for v in init.as_array()]
    t = init.t
    times = np.empty(len(steps) + 1)
    values = np.empty((len(steps) + 1, 6))
    times[0] = t
    values[0] = y
    for k, h in enumerate(steps, start=1):
        y = rk4_step(y, params, h)
        t = init.t + (k * dt if k <= n_full else t_end)
        if not all(math.isfinite(v) for v in y):
            raise NonFiniteStateError("macroscopic state became non-finite", t=t)
        times[k] = t
        values[k] = y
    return MacroTrajectory(times, values, params)


def mean_equilibrium(params: Params, total_mass: float) -> tuple[float, float, float]:
    """Endemic equilibrium of the means for alpha > 0 and total mass M."""
    p = params
    if p.alpha <= 0:
        raise ConfigError("closed-form mean equilibrium needs alpha > 0")
    m_s = p.gamma / p.beta
    if m_s >= total_mass:
        raise InfeasibleParametersError(
            f"gamma/beta = {m_s:.6g} must be below the total mass {total_mass:.6g} for an endemic state"
        )
    excess = total_mass - m_s
    return (m_s, p.alpha / (p.gamma + p.alpha) * excess, p.gamma / (p.gamma + p.alpha) * excess)


def run_to_extinction(init: MomentState, params: Params, dt: float = 0.5, tol: float = 1e-10, t_max: float = 1e6):
    """Integrate until m_I < tol; returns the final state."""
    y = [float(v) for v in init.as_array()]
    t = init.t
    while y[1] >= tol:
        y = rk4_step(y, params, dt)
        t += dt
        if not all(math.isfinite(v) for v in y):
            raise NonFiniteStateError("macroscopic state became non-finite", t=t)
        if t - init.t > t_max:
            raise InfeasibleParametersError(f"m_I did not fall below {tol} within t={t_max}")
    return MomentState.from_array(y, t=t)


def equilibrium(params: Params, total_mass: float | None = None, init: MomentState | None = None) -> MomentState:
    """Stationary means and variances.

    With alpha > 0 the closed forms are used. Without reinfection the final
    sizes have no closed form, so ``init`` is integrated until the infected
    mean drops below 1e-10; the infected variance is then 0 and the
    recovered variance keeps its initial value.
    """
    p = params
    if total_mass is None:
        if init is None:
            raise ConfigError("equilibrium needs total_mass or an initial state")
        total_mass = init.total_mass
    if p.alpha > 0:
        m_s, m_i, m_r = mean_equilibrium(p, total_mass)
        if p.sigma_s >= 2.0 * p.beta:
            raise InfeasibleParametersError("susceptible variance unbounded: sigma_s >= 2*beta")
        den_i = 2.0 * p.gamma * p.theta - (p.sigma_i + 2.0 * p.beta) * m_s
        if den_i <= 0:
            raise InfeasibleParametersError("infected variance unbounded at the equilibrium means")
        v_s = p.sigma_s * m_s**2 / (2.0 * p.beta - p.sigma_s)
        v_i = p.sigma_i * m_s * m_i**2 / den_i
        v_r = p.sigma_r / (2.0 * p.alpha - p.sigma_r) * m_r**2
        return MomentState(m_s, m_i, m_r, v_s, v_i, v_r, t=math.inf)
    if init is None:
        raise ConfigError("without reinfection the equilibrium depends on the initial state; pass init")
    end = run_to_extinction(init, p)
    return MomentState(end.m_s, end.m_i, end.m_r, end.v_s, 0.0, init.v_r, t=math.inf)
