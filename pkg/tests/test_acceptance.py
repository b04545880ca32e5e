"""Acceptance suite: one PASS/FAIL line per criterion at the stated tolerances.

Criteria that cannot be met are left failing on purpose; the line printed
for each states the measured quantity next to its threshold.
"""

import math
import os
import time
import warnings

import numpy as np
import pytest

from kinsir.analytic import (
    no_reinfection_limits,
    recovered_terminal,
    susceptible_profile,
    susceptible_terminal,
    wealth_coefficients,
    wealth_fp_run,
)
from kinsir.core import COMPARTMENTS, Density, Grid, MomentState, Params, make_uniform_density, moment
from kinsir.equilibria import InverseGamma, QuasiEquilibriumWarning, dt_bound_coefficients, quasi_equilibrium, wealth_equilibrium
from kinsir.errors import DomainError
from kinsir.fokker_planck import FpState, discrete_quasi_equilibrium, flux_coefficients, fp_step, run_fp
from kinsir.macro import equilibrium, integrate
from kinsir.mc import (
    apply_scaling,
    immunity_loss,
    initial_ensemble,
    mc_step,
    noise_amplitude,
    recovered_gain,
    recovery_interaction,
    run_mc,
    si_interaction,
    susceptible_gain,
)
from kinsir.metrics import (
    decay_bound_rate,
    decay_rate_check,
    energy_distance,
    energy_to_quasi_equilibrium,
    printed_energy_constant,
    sobolev_minus_p,
)
from kinsir.scenario import load_scenario

TABLE1 = Params(alpha=1 / 50, beta=1 / 20, gamma=1 / 14, theta=2, sigma_s=1 / 100, sigma_i=1 / 100)
INIT = MomentState(4.0, 1.0, 0.5, 1 / 120, 1 / 120, 1 / 120)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, elapsed, limit):
        ok = bool(ok) and elapsed < limit
        with capsys.disabled():
            print(f"\nCRITERION {n:>2}: {'PASS' if ok else 'FAIL'} | {detail} | {elapsed:.1f}s (limit {limit:g}s)")
        return ok

    return emit


def _table1_densities(grid):
    return [make_uniform_density(m, 1 / 120, grid) for m in (4.0, 1.0, 0.5)]


@pytest.fixture(scope="module")
def table1_fp():
    """Reference-rate run on [0, 300], 3001 cells, dt = 0.1 to t = 300."""
    g = Grid(300.0, 3001)
    worst = {"min": math.inf, "mass": 0.0}

    def check(st):
        for d in st.densities:
            worst["min"] = min(worst["min"], float(d.values.min()))
            worst["mass"] = max(worst["mass"], abs(d.mass - 1.0))

    t0 = time.perf_counter()
    hist = run_fp(FpState.initial(*_table1_densities(g), TABLE1), 300.0, 0.1, output_every=1.0, on_step=check)
    return hist, time.perf_counter() - t0, worst


def test_criterion_01_macro_equilibrium(report):
    t0 = time.perf_counter()
    sc = load_scenario(preset="fig-caption", overrides={"params.alpha": "0.02"})
    p = sc.params
    init = MomentState(*sc.init_means, *sc.init_variances)
    fin = integrate(init, p, 3000.0, 0.5).final
    elapsed = time.perf_counter() - t0
    err_s = abs(fin.m_s - 5 / 21)
    line = abs(p.gamma * fin.m_i - p.alpha * fin.m_r)
    total = abs(fin.total_mass - 1.0)
    ok = err_s <= 1e-6 and line <= 1e-6 and total <= 1e-9 and p.sigma_r == p.alpha
    assert report(1, ok, f"|m_S-5/21|={err_s:.2e} |gm_I-am_R|={line:.2e} |M-1|={total:.2e}", elapsed, 1.0)


def test_criterion_02_variance_fixed_point(report):
    t0 = time.perf_counter()
    fin = integrate(INIT, TABLE1, 1e4, 0.5).final
    elapsed = time.perf_counter() - t0
    target = np.array([0.226757, 0.088141, 10.117512])
    rel = np.abs(np.array(fin.variances) - target) / target
    assert report(2, np.all(rel <= 1e-4), f"rel err V=({rel[0]:.1e}, {rel[1]:.1e}, {rel[2]:.1e}) tol 1e-4", elapsed, 1.0)


def test_criterion_03_fp_tracks_macro(report, table1_fp):
    hist, elapsed, _ = table1_fp
    t0 = time.perf_counter()
    ref = integrate(INIT, TABLE1, 300.0, 0.1)
    fp = hist.moment_array()[:, :3]
    ode = np.array([ref.at(t).as_array()[:3] for t in hist.times])
    rel = np.max(np.abs(fp - ode) / ode, axis=0)
    elapsed += time.perf_counter() - t0
    detail = f"max rel mean err (S,I,R)=({rel[0]:.2%}, {rel[1]:.2%}, {rel[2]:.2%}) tol 1%"
    assert report(3, np.all(rel <= 0.01), detail, elapsed, 120.0)


def test_criterion_04_well_balanced(report):
    t0 = time.perf_counter()
    g = Grid(300.0, 3001)
    eq = equilibrium(TABLE1, total_mass=5.5)
    q = [discrete_quasi_equilibrium(flux_coefficients(c, eq, TABLE1), g) for c in COMPARTMENTS]
    state = FpState(*q, 0.0, TABLE1)
    worst = 0.0
    for _ in range(5):
        new = fp_step(state, 0.1, mean_source="frozen", frozen_means=eq)
        for a, b in zip(state.densities, new.densities):
            worst = max(worst, float(np.max(np.abs(b.values - a.values)) / np.max(a.values)))
        state = new
    elapsed = time.perf_counter() - t0
    assert report(4, worst <= 1e-10, f"max relative change per step {worst:.1e} tol 1e-10", elapsed, 1.0)


def test_criterion_05_appendix_decay(report):
    t0 = time.perf_counter()
    sigma, lam, mu = 0.1, 0.2, 0.05
    g = Grid(10.0, 4000)
    init = make_uniform_density(0.5, 0.25**2 / 3, g)
    hist = wealth_fp_run(init, sigma, lam, mu, 200.0, 0.05, output_every=1.0)
    l1 = hist.final.l1_distance(wealth_equilibrium(sigma, lam, mu).cell_averages(g))
    # squared H_-1 distance to the equilibrium of the scheme, sampled every unit
    # of time until it reaches the quadrature floor
    target = discrete_quasi_equilibrium(wealth_coefficients(sigma, lam, mu), g)
    times = hist.times[:40]
    z = [sobolev_minus_p(d, target, 1.0) for d in hist.densities[:40]]
    rep = decay_rate_check(times, z, decay_bound_rate(sigma, lam, 1.0), slack=0.05)
    elapsed = time.perf_counter() - t0
    ok = l1 <= 1e-3 and rep.ok and rep.bound_rate == pytest.approx(0.225)
    detail = f"L1(f(200), IG(5,1))={l1:.1e} tol 1e-3; decay ok={rep.ok} at {len(z) - 2} times (worst dz/(-0.225 z)={rep.worst_ratio:.2f})"
    assert report(5, ok, detail, elapsed, 60.0)


def _bump(g, mu, s):
    return Density.normalized(np.exp(-0.5 * ((g.centers - mu) / s) ** 2), g)


def test_criterion_06_energy_equivalence(report):
    t0 = time.perf_counter()
    g = Grid(20.0, 2000)
    pairs = [
        (_bump(g, 5.0, 1.0), _bump(g, 6.5, 1.5)),
        (_bump(g, 4.0, 0.8), InverseGamma(6.0, 20.0).cell_averages(g)),
        (InverseGamma(5.0, 8.0).cell_averages(g), InverseGamma(9.0, 30.0).cell_averages(g)),
    ]
    c = printed_energy_constant(0.75)
    ratios = [energy_distance(f, h, 0.75) / (c * sobolev_minus_p(f, h, 0.75)) for f, h in pairs]
    elapsed = time.perf_counter() - t0
    dev = max(abs(r - 1.0) for r in ratios)
    detail = f"C(3/4)={c:.3f}; E/(C*H) = {', '.join(f'{r:.4f}' for r in ratios)} tol 1%"
    assert report(6, dev <= 0.01, detail, elapsed, 10.0)


def test_criterion_07_energy_decay(report, table1_fp):
    hist, elapsed, _ = table1_fp
    t0 = time.perf_counter()
    snaps = hist.snapshots[::2]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuasiEquilibriumWarning)
        series = energy_to_quasi_equilibrium(snaps)
    worst = 0.0
    for (c, p), vals in series.values.items():
        v = np.asarray(vals)
        worst = max(worst, v[-1] / v.max())
    elapsed += time.perf_counter() - t0
    detail = f"max over J,p of E(300)/max_t E = {worst:.1e} tol 5e-2 ({len(series.values)} series)"
    assert report(7, worst <= 0.05, detail, elapsed, 180.0)


def test_criterion_08_grazing_limit(report):
    """N = 1e5 per compartment, eps = 0.01, t = 300, 20 seeds.

    The full study is run only with KINSIR_FULL_MC=1.  Otherwise the cost is
    measured on a short stretch of the eps = 0.01 run and projected; the
    criterion fails if the projection exceeds the runtime limit.
    """
    t0 = time.perf_counter()
    n, seeds, horizon, limit = 100_000, 20, 300.0, 600.0
    dt = 0.1  # scaled step; contact cap 1/dt - 2 = 8 covers the particle range
    p001 = apply_scaling(TABLE1, 0.01)
    ens = initial_ensemble(INIT.means, INIT.variances, n, seed=0)
    probe = 50
    tp = time.perf_counter()
    for _ in range(probe):
        ens = mc_step(ens, p001, dt)
    per_step = (time.perf_counter() - tp) / probe
    steps_001 = horizon / (0.01 * dt)
    # eps = 0.01 seeds plus one run each at eps = 1 and 0.1 for the L1 trend
    projected = per_step * (seeds * steps_001 + horizon / (1.0 * 0.02) + horizon / (0.1 * 0.05))
    if os.environ.get("KINSIR_FULL_MC") == "1":
        ok, detail = _full_grazing_study(n, seeds, horizon, dt)
    else:
        ok = projected < limit
        detail = (
            f"measured {per_step * 1e3:.1f} ms/step at N={n}; {seeds}x{steps_001:.0f} steps projects to "
            f"{projected / 3600:.1f} h against {limit:g}s (set KINSIR_FULL_MC=1 to run it)"
        )
    elapsed = time.perf_counter() - t0
    assert report(8, ok, detail, elapsed, limit)


def _full_grazing_study(n, seeds, horizon, dt):
    g = Grid(300.0, 3001)
    fp = run_fp(FpState.initial(*_table1_densities(g), TABLE1), horizon, 0.1, output_every=50.0)
    fp_means = {round(t): m.means for t, m in zip(fp.times, fp.moments)}
    check_t = (50.0, 150.0, 300.0)
    p001 = apply_scaling(TABLE1, 0.01)
    finals = []
    for seed in range(seeds):
        h = run_mc(initial_ensemble(INIT.means, INIT.variances, n, seed), p001, horizon, dt, output_times=check_t, keep_snapshots=False)
        finals.append([m.means for m in h.moments])
    finals = np.array(finals)  # seeds x times x compartments
    se = finals.std(axis=0, ddof=1) / math.sqrt(seeds)
    ref = np.array([fp_means[round(t)] for t in check_t])
    means_ok = bool(np.all(np.abs(finals.mean(axis=0) - ref) <= 3 * se))
    fp_final = fp.final.densities
    l1 = []
    for eps, h_dt in ((1.0, 0.02), (0.1, 0.05), (0.01, dt)):
        h = run_mc(initial_ensemble(INIT.means, INIT.variances, n, 0), apply_scaling(TABLE1, eps), horizon, h_dt, keep_snapshots=False)
        dist = 0.0
        for c, d in zip(COMPARTMENTS, fp_final):
            dist += float(np.abs(h.final.histogram(c, g).values - d.values).sum() * g.dx)
        l1.append(dist)
    trend_ok = l1[0] > l1[1] > l1[2]
    return means_ok and trend_ok, f"means within 3 SE: {means_ok}; L1 over eps (1, 0.1, 0.01) = {l1}"


def test_criterion_09_no_reinfection(report):
    t0 = time.perf_counter()
    p = TABLE1.replace(alpha=0.0, sigma_r=0.0)
    g = Grid(12.0, 24000)
    dens = _table1_densities(g)
    hist = run_fp(FpState.initial(*dens, p), 300.0, 0.1, output_every=10.0, keep_densities=False)
    lim = no_reinfection_limits(INIT, p)
    fin = hist.final
    l1_r = fin.r.l1_distance(recovered_terminal(dens[2], lim.shift))
    m_s0 = moment(dens[0], 1)
    s_ref = susceptible_terminal(dens[0], m_s0, lim.m_s_inf, lim.tstar_inf)
    l1_s = fin.s.l1_distance(s_ref)
    l1_s_2048 = fin.s.l1_distance(
        susceptible_profile(dens[0], m_s0, lim.m_s_inf, lim.tstar_inf, method="quadrature", n_nodes=2048)
    )
    v_i = fin.moments().v_i
    elapsed = time.perf_counter() - t0
    ok = l1_r <= 2e-2 and l1_s <= 1e-2 and v_i < 1e-3
    detail = (
        f"(a) L1_R={l1_r:.1e} tol 2e-2; (b) L1_S={l1_s:.1e} tol 1e-2 "
        f"[2048-node quadrature oracle: {l1_s_2048:.1e}]; (c) V_I={v_i:.1e} tol 1e-3"
    )
    assert report(9, ok, detail, elapsed, 180.0)


def test_criterion_10_invariants(report, table1_fp):
    hist, fp_time, worst = table1_fp
    t0 = time.perf_counter()
    fp_ok = worst["min"] >= 0.0 and worst["mass"] <= 1e-10

    # MC histograms every step
    g = Grid(300.0, 3001)
    ens = initial_ensemble(INIT.means, INIT.variances, 20_000, seed=11)
    hist_ok = True
    for _ in range(100):
        ens = mc_step(ens, TABLE1, 0.02)
        for c in COMPARTMENTS:
            d = ens.histogram(c, g)
            hist_ok &= d.values.min() >= 0.0 and abs(d.mass - 1.0) <= 1e-10

    # 1e6 random interactions per channel with extreme noise signs
    rng = np.random.default_rng(2024)
    m = 1_000_000
    x = rng.uniform(1e-6, 300.0, m)
    xs = rng.uniform(1e-6, 300.0, m)
    sign_s = rng.choice([-1.0, 1.0], m)
    sign_i = rng.choice([-1.0, 1.0], m)
    a, b = si_interaction(x, xs, TABLE1, sign_s * noise_amplitude(TABLE1.sigma_s, xs), sign_i * noise_amplitude(TABLE1.sigma_i, x))
    chans = [a, b, recovery_interaction(xs, float(xs.mean()), TABLE1), recovered_gain(x, xs, TABLE1)]
    chans.append(immunity_loss(x, TABLE1, rng.choice([-1.0, 1.0], m) * math.sqrt(TABLE1.sigma_r)))
    chans.append(susceptible_gain(x, xs, TABLE1))
    particles_ok = all(np.all(c > 0) for c in chans)

    # L1 time-derivative bound along one macro trajectory
    traj = integrate(INIT, TABLE1, 300.0, 0.05)
    xq = np.geomspace(1e-4, 1e4, 200_001)
    bound_ok, checked = True, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuasiEquilibriumWarning)
        for k in range(0, len(traj) - 1, 100):
            for c in COMPARTMENTS:
                try:
                    q0 = quasi_equilibrium(c, traj[k], TABLE1)
                    q1 = quasi_equilibrium(c, traj[k + 1], TABLE1)
                except DomainError:
                    continue  # infected quasi-equilibrium undefined early on
                if q0.nu <= 1.5 or q1.nu <= 1.5:
                    continue
                a_c, b_c = dt_bound_coefficients(q0)
                lhs = np.trapezoid(np.abs(q1.pdf(xq) - q0.pdf(xq)), xq) / 0.05
                rhs = abs(q1.nu - q0.nu) / 0.05 * a_c + abs(q1.omega - q0.omega) / 0.05 * b_c
                bound_ok &= lhs <= rhs * 1.01 + 1e-12
                checked += 1
    elapsed = time.perf_counter() - t0 + fp_time
    ok = fp_ok and hist_ok and particles_ok and bound_ok
    detail = (
        f"FP min={worst['min']:.1e} mass err={worst['mass']:.1e}; MC hist ok={hist_ok}; "
        f"6x1e6 interactions positive={particles_ok}; L1 dt-bound ok={bound_ok} at {checked} points"
    )
    assert report(10, ok, detail, elapsed, 120.0)
