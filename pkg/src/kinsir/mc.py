"""Direct simulation Monte Carlo of the Boltzmann-type SIR system.

Each compartment is a fixed-size particle cloud.  One time step follows the
Nanbu convention: every particle independently picks at most one event from
its own channels, partners are drawn from the pre-step clouds and the results
are written to fresh arrays.

Channels per particle (probabilities for a step ``dt`` in scaled time):

* S: contact with a random infected partner x_*, prob ``dt * (1 + x_*)``;
  reinfection gain from a random recovered partner, prob ``dt``.
* I: contact with a random susceptible partner x, prob ``dt * (1 + x)``;
  recovery towards the treatment background, prob ``dt``.
* R: gain from a random infected partner, prob ``dt``; loss of immunity, prob ``dt``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Density, Grid, MomentState, Params
from .errors import ConfigError, InfeasibleParametersError, PositivityError, ProbabilityOverflowError


def apply_scaling(params: Params, eps: float) -> Params:
    """Quasi-invariant scaling: rates and diffusions multiplied by eps."""
    if not 0 < eps <= 1:
        raise ConfigError(f"eps must lie in (0, 1], got {eps}")
    if params.eps != 1.0:
        raise ConfigError("parameters are already scaled")
    if eps == 1.0:
        return params
    return replace(
        params,
        alpha=eps * params.alpha,
        beta=eps * params.beta,
        gamma=eps * params.gamma,
        sigma_s=eps * params.sigma_s,
        sigma_i=eps * params.sigma_i,
        sigma_r=eps * params.sigma_r,
        eps=eps,
    )


def check_noise_bounds(params: Params):
    """Two-point noise keeps every particle positive under these bounds."""
    p = params
    problems = []
    if math.sqrt(p.sigma_s) >= 1.0 - p.beta:
        problems.append("sqrt(sigma_s) < 1 - beta")
    if math.sqrt(p.sigma_i) >= 1.0:
        problems.append("sqrt(sigma_i) < 1")
    if math.sqrt(p.sigma_r) >= 1.0 - p.alpha:
        problems.append("sqrt(sigma_r) < 1 - alpha")
    if problems:
        raise InfeasibleParametersError("two-point noise violates positivity bounds: need " + ", ".join(problems))


def _phi(y, beta):
    return beta * y / (1.0 + y)


def noise_amplitude(sigma: float, y):
    """Amplitude of the symmetric two-point law with variance sigma*y/(1+y)."""
    return np.sqrt(sigma * y / (1.0 + y))


def si_interaction(x, x_star, params: Params, eta_s=0.0, eta_i=0.0):
    """Susceptible x meets infected x_star; returns (x', x_star')."""
    b = params.beta
    xp = x - _phi(x_star, b) * x + eta_s * x
    xsp = x_star + _phi(x, b) * x_star + eta_i * x_star
    # a positive state must stay positive; x_star = 0 is a fixed point
    lost_s = (np.asarray(xp) <= 0) & (np.asarray(x) > 0)
    lost_i = (np.asarray(xsp) <= 0) & (np.asarray(x_star) > 0)
    if np.any(lost_s) or np.any(lost_i):
        raise PositivityError("contact produced a non-positive state; noise outside its admissible support")
    return xp, xsp


def recovery_interaction(x_star, m_i, params: Params):
    """Infected state relaxes towards the background y = (theta - 1) m_I."""
    y = (params.theta - 1.0) * m_i
    return x_star + params.gamma * (y - params.theta * x_star)


def recovered_gain(x_dstar, x_star, params: Params):
    return x_dstar + params.gamma * x_star


def immunity_loss(x_dstar, params: Params, eta_r=0.0):
    out = x_dstar * (1.0 - params.alpha + eta_r)
    if np.any(np.asarray(out) <= 0):
        raise PositivityError("immunity loss produced a non-positive state")
    return out


def susceptible_gain(x, x_dstar, params: Params):
    return x + params.alpha * x_dstar


@dataclass(frozen=True, eq=False)
class Ensemble:
    x_s: np.ndarray
    x_i: np.ndarray
    x_r: np.ndarray
    seed: int
    t: float = 0.0
    step: int = 0
    capped: int = field(default=0)

    def __post_init__(self):
        for name in ("x_s", "x_i", "x_r"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 1 or arr.size == 0:
                raise ConfigError(f"{name} must be a nonempty 1-D array")
            if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
                raise PositivityError(f"{name} contains non-positive or non-finite particles")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def arrays(self):
        return (self.x_s, self.x_i, self.x_r)

    def moments(self) -> MomentState:
        ms = [float(a.mean()) for a in self.arrays]
        vs = [float(a.var()) for a in self.arrays]
        return MomentState(*ms, *vs, t=self.t)

    def histogram(self, compartment: str, grid: Grid) -> Density:
        """Cell-averaged empirical density; particles beyond x_max land in the last cell."""
        arr = self.arrays["SIR".index(compartment)]
        counts = np.bincount(grid.cell_index(arr), minlength=grid.n_cells).astype(float)
        return Density(counts / (arr.size * grid.dx), grid)


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Counter-based stream for one step; independent of how work is scheduled."""
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | int(step)))


def _init_rng(seed: int) -> np.random.Generator:
    # the last counter value of the seed's key space is reserved for sampling
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) | (2**64 - 1)))


def initial_ensemble(means, variances, n: int, seed: int, family: str = "uniform") -> Ensemble:
    """Particles drawn from uniform, point or inverse-Gamma laws with given moments."""
    rng = _init_rng(seed)
    arrays = []
    for m, v in zip(means, variances):
        if family == "uniform" or v == 0 or family == "delta":
            half = 0.0 if family == "delta" else math.sqrt(3.0 * v)
            if m - half <= 0:
                raise ConfigError(f"uniform law with mean {m} and variance {v} reaches x <= 0")
            arrays.append(rng.uniform(m - half, m + half, n) if half > 0 else np.full(n, float(m)))
        elif family == "inverse-gamma":
            nu = 2.0 + m * m / v
            arrays.append(m * (nu - 1.0) / rng.gamma(nu, 1.0, n))
        else:
            raise ConfigError(f"unknown initial family {family!r}")
    return Ensemble(*arrays, seed=seed)


def ensemble_from_densities(densities, n: int, seed: int) -> Ensemble:
    """Sample piecewise-constant densities: a cell by its mass, then uniformly inside it."""
    rng = _init_rng(seed)
    arrays = []
    for d in densities:
        w = d.values * d.grid.dx
        cells = rng.choice(d.grid.n_cells, size=n, p=w / w.sum())
        x = d.grid.edges[cells] + rng.random(n) * d.grid.dx
        # a particle exactly at x = 0 is excluded by the positive state space
        arrays.append(np.where(x > 0, x, 0.5 * d.grid.dx))
    return Ensemble(*arrays, seed=seed)


def default_cap(dt: float) -> float:
    """Largest partner state whose contact probability still fits in one step."""
    return 1.0 / dt - 2.0


def mc_step(ens: Ensemble, params: Params, dt: float, x_cap: float | None = None) -> Ensemble:
    """One Nanbu step of length ``dt`` in scaled time (physical time advances eps*dt)."""
    if dt < 0:
        raise ConfigError(f"dt must be nonnegative, got {dt}")
    if dt == 0:
        return ens
    cap = default_cap(dt) if x_cap is None else float(x_cap)
    if cap <= 0 or dt * (2.0 + cap) > 1.0 + 1e-12:
        raise ProbabilityOverflowError(
            f"dt={dt} too large for contact cap {cap}: need dt*(2 + cap) <= 1"
        )
    p = params
    rng = step_rng(ens.seed, ens.step)
    xs, xi, xr = ens.x_s, ens.x_i, ens.x_r
    ns, ni, nr = xs.size, xi.size, xr.size
    capped = 0

    # susceptible
    j = rng.integers(ni, size=ns)
    partner = xi[j]
    over = partner > cap
    capped += int(over.sum())
    rate = dt * (1.0 + np.minimum(partner, cap))
    u = rng.random(ns)
    sign = rng.integers(2, size=ns) * 2.0 - 1.0
    k = rng.integers(nr, size=ns)
    contact = u < rate
    gain = ~contact & (u < rate + dt)
    new_s = xs.copy()
    eta = sign[contact] * noise_amplitude(p.sigma_s, partner[contact])
    new_s[contact] = xs[contact] * (1.0 - _phi(partner[contact], p.beta) + eta)
    new_s[gain] = susceptible_gain(xs[gain], xr[k[gain]], p)

    # infected
    j = rng.integers(ns, size=ni)
    partner = xs[j]
    over = partner > cap
    capped += int(over.sum())
    rate = dt * (1.0 + np.minimum(partner, cap))
    u = rng.random(ni)
    sign = rng.integers(2, size=ni) * 2.0 - 1.0
    contact = u < rate
    recover = ~contact & (u < rate + dt)
    new_i = xi.copy()
    eta = sign[contact] * noise_amplitude(p.sigma_i, partner[contact])
    new_i[contact] = xi[contact] * (1.0 + _phi(partner[contact], p.beta) + eta)
    new_i[recover] = recovery_interaction(xi[recover], float(xi.mean()), p)

    # recovered
    u = rng.random(nr)
    k = rng.integers(ni, size=nr)
    sign = rng.integers(2, size=nr) * 2.0 - 1.0
    gain = u < dt
    loss = ~gain & (u < 2.0 * dt)
    new_r = xr.copy()
    new_r[gain] = recovered_gain(xr[gain], xi[k[gain]], p)
    if p.alpha > 0:
        new_r[loss] = xr[loss] * (1.0 - p.alpha + sign[loss] * math.sqrt(p.sigma_r))

    for name, arr in (("S", new_s), ("I", new_i), ("R", new_r)):
        if arr.min() <= 0:
            raise PositivityError(f"{name} particle became non-positive at step {ens.step}")
    return Ensemble(new_s, new_i, new_r, ens.seed, ens.t + p.eps * dt, ens.step + 1, ens.capped + capped)


@dataclass
class McHistory:
    times: list = field(default_factory=list)
    moments: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    capped_events: int = 0
    final: Ensemble | None = None

    def moment_array(self):
        return np.array([m.as_array() for m in self.moments])


def run_mc(
    ens: Ensemble,
    params: Params,
    t_end: float,
    dt: float,
    output_times=None,
    x_cap: float | None = None,
    keep_snapshots: bool = True,
    snapshot_times=None,
) -> McHistory:
    """Advance to physical time ``ens.t + t_end`` with scaled step ``dt``.

    ``params`` must already be scaled (see :func:`apply_scaling`); the number
    of steps is t_end / (eps * dt).  Moments are recorded at ``output_times``
    (default: start and end); ensembles are kept at ``snapshot_times`` or, if
    that is None and ``keep_snapshots`` is set, at every output time.
    """
    check_noise_bounds(params)
    h = params.eps * dt
    n_steps = int(round(t_end / h))
    if abs(n_steps * h - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError(f"t_end={t_end} is not a multiple of the physical step {h}")
    to_steps = lambda ts: {int(round(t / h)) for t in ts}  # noqa: E731
    out_steps = {0, n_steps} if output_times is None else to_steps(output_times)
    if snapshot_times is not None:
        snap_steps = to_steps(snapshot_times)
    else:
        snap_steps = out_steps if keep_snapshots else set()
    hist = McHistory()

    t0 = ens.t

    def visit(k, e):
        if k in out_steps:
            t = t0 + k * h
            hist.times.append(t)
            hist.moments.append(replace(e.moments(), t=t))
        if k in snap_steps:
            hist.snapshots.append(e)

    visit(0, ens)
    for k in range(1, n_steps + 1):
        ens = mc_step(ens, params, dt, x_cap)
        visit(k, ens)
    hist.final = ens
    hist.capped_events = ens.capped
    return hist


def variance_rhs_boltzmann(ens: Ensemble, params: Params, corrected: bool = False) -> tuple[float, float, float]:
    """Variance right-hand sides of the Boltzmann system with ensemble averages.

    The infected equation is evaluated as usually printed; ``corrected=True``
    adds the -2 beta m_S m_I^2 contribution of the contact term to -2 m_I dm_I/dt,
    which the printed form omits.
    """
    p = params
    ms = ens.moments()
    m_s, m_i, m_r = ms.means
    v_s, v_i, v_r = ms.variances
    k_i = float(np.mean(ens.x_i**2 / (1.0 + ens.x_i)))
    k_s = float(np.mean(ens.x_s**2 / (1.0 + ens.x_s)))
    y2 = ((p.theta - 1.0) * m_i) ** 2
    e2_s, e2_i, e2_r = v_s + m_s**2, v_i + m_i**2, v_r + m_r**2
    dv_s = e2_s * (p.beta**2 * k_i + p.sigma_s * m_i) - 2.0 * p.beta * m_i * v_s + p.alpha**2 * e2_r
    dv_i = (
        e2_i * (p.beta**2 * k_s + (2.0 * p.beta + p.sigma_i) * m_s)
        + (p.gamma**2 * p.theta**2 - 2.0 * p.theta * p.gamma) * e2_i
        + 2.0 * p.gamma * p.theta * (1.0 - p.gamma * (p.theta - 1.0)) * m_i**2
        + p.gamma**2 * y2
    )
    if corrected:
        dv_i -= 2.0 * p.beta * m_s * m_i**2
    dv_r = p.gamma**2 * e2_i - 2.0 * p.alpha * v_r + (p.alpha**2 + p.sigma_r) * e2_r
    return dv_s, dv_i, dv_r
