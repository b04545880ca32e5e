"""Command-line entry point: ``kinsir <mode> --scenario FILE | --preset NAME``."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import no_reinfection_limits, recovered_terminal, susceptible_terminal
from .core import COMPARTMENTS, Density, MomentState, make_delta_density, make_uniform_density, moments_of
from .equilibria import InverseGamma, quasi_equilibrium
from .errors import ConfigError, KinsirError, OutputError
from .fokker_planck import FpState, run_fp, tail_mass_diagnostic
from .macro import equilibrium, integrate
from .mc import apply_scaling, ensemble_from_densities, initial_ensemble, run_mc
from .metrics import energy_to_quasi_equilibrium
from .scenario import PRESETS, Scenario, load_scenario

MODES = ("macro", "fp", "mc", "analytic", "compare")
MOMENT_COLUMNS = ("m_S", "m_I", "m_R", "V_S", "V_I", "V_R")
FLOAT = "%.17g"


# ---------------------------------------------------------------- writers


def _fmt(v) -> str:
    return v if isinstance(v, str) else FLOAT % v


def _tag(t: float) -> str:
    return f"{t:g}"


def write_csv(path: Path, digest: str, header, rows) -> None:
    """First line ``# kinsir scenario_sha256=<hex>``, then a header, then rows."""
    lines = [f"# kinsir scenario_sha256={digest}", ",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def write_json(path: Path, payload: dict) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
            fh.write("\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(v):
    """JSON has no infinities; map them to None."""
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _moments_dict(m: MomentState) -> dict:
    return {k: _clean(float(v)) for k, v in zip(MOMENT_COLUMNS, m.as_array())}


def write_density(out: Path, digest: str, compartment: str, tag: str, d: Density) -> str:
    name = f"density_{compartment}_{tag}.csv"
    write_csv(out / name, digest, ("x", "f"), zip(d.grid.centers, d.values))
    return name


def _is_numeric_row(line: str) -> bool:
    try:
        [float(v) for v in line.split(",")]
    except ValueError:
        return False
    return True


def read_density_csv(path: str, grid) -> Density:
    """Two-column ``x,f`` file on the scenario grid; comment lines start with '#'."""
    try:
        rows = [
            line
            for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.lstrip().startswith("#")
        ]
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    if rows and not _is_numeric_row(rows[0]):
        rows = rows[1:]  # header line
    try:
        data = np.array([[float(v) for v in r.split(",")] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed density file ({exc})") from exc
    if data.ndim != 2 or data.shape != (grid.n_cells, 2):
        raise ConfigError(f"{path}: expected {grid.n_cells} rows of 'x,f' matching the grid")
    if not np.allclose(data[:, 0], grid.centers, rtol=0, atol=1e-9 * grid.x_max):
        raise ConfigError(f"{path}: x column does not match the scenario grid centres")
    if np.any(data[:, 1] < 0):
        raise ConfigError(f"{path}: negative density values")
    return Density.normalized(data[:, 1], grid)


# ---------------------------------------------------------------- initial data


def initial_densities(sc: Scenario) -> tuple[Density, Density, Density]:
    g = sc.grid
    out = []
    for k, (m, v) in enumerate(zip(sc.init_means, sc.init_variances)):
        if sc.init_family == "uniform":
            out.append(make_uniform_density(m, v, g))
        elif sc.init_family == "delta":
            out.append(make_delta_density(m, g))
        elif sc.init_family == "inverse-gamma":
            nu = 2.0 + m * m / v
            out.append(InverseGamma(nu, m * (nu - 1.0)).cell_averages(g))
        else:
            out.append(read_density_csv(sc.init_files[k], g))
    return tuple(out)


def initial_moments(sc: Scenario) -> MomentState:
    if sc.init_family == "file":
        return moments_of(initial_densities(sc))
    v = (0.0, 0.0, 0.0) if sc.init_family == "delta" else sc.init_variances
    return MomentState(*sc.init_means, *v, t=0.0)


def output_times(sc: Scenario) -> np.ndarray:
    n = int(math.floor(sc.t_end / sc.output_every + 1e-9))
    t = [k * sc.output_every for k in range(n + 1)]
    if sc.t_end - t[-1] > 1e-9 * max(1.0, sc.t_end):
        t.append(sc.t_end)
    return np.array(t)


# ---------------------------------------------------------------- modes


def _macro(sc: Scenario):
    init = initial_moments(sc)
    traj = integrate(init, sc.params, sc.t_end, sc.macro_dt)
    return [traj.at(t) for t in output_times(sc)], traj


def _fp(sc: Scenario):
    """FP history plus the states at the requested density times."""
    s, i, r = initial_densities(sc)
    init = FpState.initial(s, i, r, sc.params)
    wanted = {int(round(t / sc.dt)): t for t in sc.density_times}
    captured = {0: init} if 0 in wanted else {}

    def grab(st):
        if st.step in wanted:
            captured[st.step] = st

    hist = run_fp(
        init,
        sc.t_end,
        sc.dt,
        output_every=sc.output_every,
        mean_source=sc.fp_mean_source,
        order=sc.fp_order,
        on_step=grab,
        moment_fix=sc.fp_moment_fix,
    )
    return hist, [(wanted[k], captured[k]) for k in sorted(captured)]


def _mc(sc: Scenario):
    params = apply_scaling(sc.params, sc.mc_eps)
    if sc.init_family == "file":
        ens = ensemble_from_densities(initial_densities(sc), sc.mc_n, sc.seed)
    else:
        ens = initial_ensemble(sc.init_means, sc.init_variances, sc.mc_n, sc.seed, family=sc.init_family)
    return run_mc(
        ens,
        params,
        sc.t_end,
        sc.mc_dt,
        output_times=output_times(sc),
        x_cap=sc.mc_x_cap,
        snapshot_times=sc.density_times,
    )


def _max_rel(a: np.ndarray, b: np.ndarray) -> list:
    """Per-column max |a - b| / |b| over rows."""
    return [float(np.max(np.abs(a[:, j] - b[:, j]) / np.abs(b[:, j]))) for j in range(a.shape[1])]


def _base_report(sc: Scenario, mode: str) -> dict:
    return {
        "kinsir_version": __version__,
        "mode": mode,
        "scenario": sc.name,
        "scenario_sha256": sc.sha256,
        "resolved": dict(sc.resolved),
        "warnings": sc.params.regime_warnings(),
    }


def run_scenario(sc: Scenario, mode: str, out: Path) -> dict:
    """Run one mode, write its files into ``out`` and return the report."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    digest = sc.sha256
    report = _base_report(sc, mode)
    files = []
    moment_rows = []
    header = ("source", "t") + MOMENT_COLUMNS

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")

        if mode in ("macro", "compare"):
            states, traj = _macro(sc)
            moment_rows += [("macro", m.t, *m.as_array()) for m in states]
            total = traj.values[:, :3].sum(axis=1)
            report["macro"] = {
                "final": _moments_dict(traj.final),
                "max_total_mass_drift": float(np.max(np.abs(total - total[0]))),
            }
            if mode == "macro" and sc.params.alpha > 0:
                try:
                    report["macro"]["equilibrium"] = _moments_dict(equilibrium(sc.params, init=traj[0]))
                except ConfigError as exc:
                    report["macro"]["equilibrium"] = str(exc)

        if mode in ("fp", "compare"):
            hist, captured = _fp(sc)
            moment_rows += [("fp", m.t, *m.as_array()) for m in hist.moments]
            for t, st in captured:
                for c in COMPARTMENTS:
                    files.append(write_density(out, digest, c, _tag(t), st.density(c)))
            fp_report = {
                "final": _moments_dict(hist.moments[-1]),
                "min_density": float(min(d.values.min() for st in hist.snapshots for d in st.densities)),
                "max_mass_error": float(
                    max(abs(d.mass - 1.0) for st in hist.snapshots for d in st.densities)
                ),
                "tail_mass": {k: _clean(v) for k, v in tail_mass_diagnostic(hist.final).items()},
            }
            if mode == "fp" and sc.metrics_p:
                series = energy_to_quasi_equilibrium(hist.snapshots, ps=sc.metrics_p)
                comps = sorted({c for c, _ in series.values}, key=COMPARTMENTS.index)
                rows = []
                for c in comps:
                    for k, t in enumerate(series.times):
                        rows.append((c, t, *(series.values[(c, p)][k] for p in sc.metrics_p)))
                write_csv(
                    out / "metrics.csv",
                    digest,
                    ("compartment", "t") + tuple(f"E_{p:g}" for p in sc.metrics_p),
                    rows,
                )
                files.append("metrics.csv")
            report["fp"] = fp_report

        if mode in ("mc", "compare"):
            mh = _mc(sc)
            moment_rows += [("mc", m.t, *m.as_array()) for m in mh.moments]
            for ens in mh.snapshots:
                for c in COMPARTMENTS:
                    files.append(write_density(out, digest, c, "mc_" + _tag(ens.t), ens.histogram(c, sc.grid)))
            report["mc"] = {
                "final": _moments_dict(mh.moments[-1]),
                "capped_contacts": mh.capped_events,
                "n_particles": sc.mc_n,
                "seed": sc.seed,
            }

        if mode == "compare":
            arr = {src: np.array([r[2:] for r in moment_rows if r[0] == src]) for src in ("macro", "fp", "mc")}
            means = slice(0, 3)
            report["compare"] = {
                "fp_vs_macro_max_rel_mean": _max_rel(arr["fp"][:, means], arr["macro"][:, means]),
                "mc_vs_macro_max_rel_mean": _max_rel(arr["mc"][:, means], arr["macro"][:, means]),
                "fp_vs_macro_max_rel_var": _max_rel(arr["fp"][:, 3:], arr["macro"][:, 3:]),
            }

        if mode == "analytic":
            report["analytic"] = _analytic(sc, out, digest, files)

    if moment_rows:
        write_csv(out / "moments.csv", digest, header, moment_rows)
        files.append("moments.csv")
    report["warnings"] += sorted({str(w.message) for w in caught})
    report["files"] = sorted(set(files) | {"report.json"})
    write_json(out / "report.json", report)
    return report


def _analytic(sc: Scenario, out: Path, digest: str, files: list) -> dict:
    p = sc.params
    init = initial_moments(sc)
    if p.alpha == 0:
        lim = no_reinfection_limits(init, p)
        s0, _, r0 = initial_densities(sc)
        s0_mean = float(np.dot(s0.grid.centers, s0.values) * s0.grid.dx)
        s_inf = susceptible_terminal(s0, s0_mean, lim.m_s_inf, lim.tstar_inf)
        r_inf = recovered_terminal(r0, lim.shift)
        files.append(write_density(out, digest, "S", "inf", s_inf))
        files.append(write_density(out, digest, "R", "inf", r_inf))
        return {
            "m_S_inf": lim.m_s_inf,
            "m_R_inf": lim.m_r_inf,
            "shift": lim.shift,
            "tstar_inf": lim.tstar_inf,
            "m_S0_density": s0_mean,
        }
    eq = equilibrium(p, init=init)
    result = {"equilibrium": _moments_dict(eq), "quasi_equilibria": {}}
    for c in COMPARTMENTS:
        ig = quasi_equilibrium(c, eq, p)
        result["quasi_equilibria"][c] = {"nu": ig.nu, "omega": ig.omega, "tail_mass": ig.tail_mass(sc.grid.x_max)}
        files.append(write_density(out, digest, c, "inf", ig.cell_averages(sc.grid)))
    return result


# ---------------------------------------------------------------- entry point


def _parse_sets(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        out[k] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kinsir", description="Kinetic SIR model with viral load.")
    ap.add_argument("--version", action="version", version=f"kinsir {__version__}")
    ap.add_argument("mode", choices=MODES)
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", nargs="+", metavar="FILE", help="scenario file(s)")
    src.add_argument("--preset", choices=sorted(PRESETS))
    ap.add_argument("--seed", type=int, help="overrides run.seed")
    ap.add_argument("--out", help="output directory (default: $KINSIR_OUT or ./kinsir-out)")
    ap.add_argument("--jobs", type=int, default=1, help="independent scenarios run in parallel")
    ap.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario key")
    return ap


def _job(path, preset, overrides, mode, out) -> dict:
    sc = load_scenario(path, preset=preset, overrides=overrides)
    return run_scenario(sc, mode, Path(out))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = _parse_sets(args.set)
        if args.seed is not None:
            overrides["run.seed"] = str(args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        out = Path(args.out or os.environ.get("KINSIR_OUT") or "kinsir-out")
        paths = args.scenario or [None]
        if len(paths) == 1:
            jobs = [(paths[0], args.preset, overrides, args.mode, out)]
        else:
            jobs = [(p, None, overrides, args.mode, out / Path(p).stem) for p in paths]
            if len({j[4] for j in jobs}) != len(jobs):
                raise ConfigError("scenario files must have distinct names")
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                reports = list(pool.map(_job, *zip(*jobs)))
        else:
            reports = [_job(*j) for j in jobs]
    except KinsirError as exc:
        print(f"kinsir: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"kinsir: error: {exc}", file=sys.stderr)
        return 4
    for r in reports:
        for w in r["warnings"]:
            print(f"kinsir: warning: {w}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
