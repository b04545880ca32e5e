"""Scenario files: flat ``key = value`` configuration with presets.

Lines are ``dotted.key = value``; ``#`` starts a comment; blank lines are
ignored.  Numbers may be written as fractions (``1/50``).  Lists are comma
separated.  Unknown keys are rejected so that misspellings never fall back
to defaults silently.  Precedence: command-line overrides > file > preset.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .core import Grid, Params
from .errors import ConfigError

# key -> default ("" means unset/optional, None means required)
KEYS = {
    "name": "scenario",
    "preset": "",
    "params.alpha": None,
    "params.beta": None,
    "params.gamma": None,
    "params.theta": None,
    "params.sigma_s": None,
    "params.sigma_i": None,
    "params.sigma_r": "",
    "init.family": "uniform",
    "init.m_s": None,
    "init.m_i": None,
    "init.m_r": None,
    "init.v_s": "0",
    "init.v_i": "0",
    "init.v_r": "0",
    "init.file_s": "",
    "init.file_i": "",
    "init.file_r": "",
    "grid.x_max": "300",
    "grid.n_cells": "3001",
    "time.t_end": "300",
    "time.dt": "0.1",
    "time.output_every": "1",
    "macro.dt": "0.1",
    "fp.mean_source": "self-consistent",
    "fp.order": "2",
    "fp.moment_fix": "1",
    "mc.n_particles": "10000",
    "mc.eps": "0.1",
    "mc.dt": "0.05",
    "mc.x_cap": "",
    "run.seed": "0",
    "metrics.p": "5/8,3/4,7/8",
    "output.density_times": "",
}

FAMILIES = ("uniform", "delta", "inverse-gamma", "file")

PRESETS = {
    # reference rates; theta = 2 is a choice, not part of the rate set
    "paper-table1": {
        "name": "paper-table1",
        "params.alpha": "1/50",
        "params.beta": "1/20",
        "params.gamma": "1/14",
        "params.theta": "2",
        "params.sigma_s": "1/100",
        "params.sigma_i": "1/100",
        "params.sigma_r": "1/50",
        "init.m_s": "4",
        "init.m_i": "1",
        "init.m_r": "0.5",
        "init.v_s": "1/120",
        "init.v_i": "1/120",
        "init.v_r": "1/120",
    },
    # same rates without reinfection; a finer, shorter grid resolves the
    # infected density as it collapses towards x = 0
    "no-reinfection": {
        "name": "no-reinfection",
        "params.alpha": "0",
        "params.beta": "1/20",
        "params.gamma": "1/14",
        "params.theta": "2",
        "params.sigma_s": "1/100",
        "params.sigma_i": "1/100",
        "params.sigma_r": "0",
        "init.m_s": "4",
        "init.m_i": "1",
        "init.m_r": "0.5",
        "init.v_s": "1/120",
        "init.v_i": "1/120",
        "init.v_r": "1/120",
        "grid.x_max": "12",
        "grid.n_cells": "24000",
        "time.output_every": "10",
    },
    # unit total mass; alpha is left open, so params.alpha
    # must be supplied (sigma_r then defaults to alpha)
    "fig-caption": {
        "name": "fig-caption",
        "params.beta": "2/10",
        "params.gamma": "1/21",
        "params.theta": "2",
        "params.sigma_s": "1/10",
        "params.sigma_i": "1/10",
        "init.family": "inverse-gamma",
        "init.m_s": "0.9",
        "init.m_i": "0.05",
        "init.m_r": "0.05",
        "init.v_s": "0.01",
        "init.v_i": "0.01",
        "init.v_r": "0.01",
        "grid.x_max": "20",
        "grid.n_cells": "4000",
        "time.t_end": "300",
    },
}


def parse_number(text: str, key: str = "") -> float:
    s = text.strip()
    try:
        value = float(Fraction(s)) if "/" in s else float(s)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key}: value must be finite, got {text!r}")
    return value


def parse_int(text: str, key: str = "") -> int:
    value = parse_number(text, key)
    if value != int(value):
        raise ConfigError(f"{key}: expected an integer, got {text!r}")
    return int(value)


def parse_list(text: str, key: str = "") -> tuple[float, ...]:
    return tuple(parse_number(part, key) for part in text.split(",") if part.strip())


def parse_text(text: str, source: str = "<string>") -> dict:
    """Parse key = value lines; returns an ordered dict of raw strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    if not out:
        raise ConfigError(f"{source}: empty scenario (no keys)")
    return out


def read_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{p}: not valid UTF-8 ({exc})") from exc
    return parse_text(text, str(p))


@dataclass(frozen=True)
class Scenario:
    name: str
    params: Params
    init_family: str
    init_means: tuple
    init_variances: tuple
    init_files: tuple
    grid: Grid
    t_end: float
    dt: float
    output_every: float
    macro_dt: float
    fp_mean_source: str
    fp_order: int
    fp_moment_fix: bool
    mc_n: int
    mc_eps: float
    mc_dt: float
    mc_x_cap: float | None
    seed: int
    metrics_p: tuple
    density_times: tuple
    resolved: tuple  # sorted (key, value) pairs actually in force

    @property
    def sha256(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.resolved)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build(values: dict) -> Scenario:
    """Validate merged raw values into a Scenario."""
    merged = {k: v for k, v in KEYS.items()}
    merged.update(values)
    missing = [k for k, v in merged.items() if v is None]
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(sorted(missing)))

    num = lambda k: parse_number(merged[k], k)  # noqa: E731
    sigma_r = num("params.sigma_r") if merged["params.sigma_r"] != "" else None
    params = Params(
        alpha=num("params.alpha"),
        beta=num("params.beta"),
        gamma=num("params.gamma"),
        theta=num("params.theta"),
        sigma_s=num("params.sigma_s"),
        sigma_i=num("params.sigma_i"),
        sigma_r=sigma_r,
    )
    family = merged["init.family"]
    if family not in FAMILIES:
        raise ConfigError(f"init.family must be one of {FAMILIES}, got {family!r}")
    means = tuple(num(f"init.m_{c}") for c in "sir")
    variances = tuple(num(f"init.v_{c}") for c in "sir")
    if any(m <= 0 for m in means):
        raise ConfigError("initial means must be positive")
    if any(v < 0 for v in variances):
        raise ConfigError("initial variances must be nonnegative")
    files = tuple(merged[f"init.file_{c}"] for c in "sir")
    if family == "file" and not all(files):
        raise ConfigError("init.family = file needs init.file_s, init.file_i and init.file_r")
    if family == "inverse-gamma" and any(v == 0 for v in variances):
        raise ConfigError("inverse-gamma initial data need positive variances")
    grid = Grid(num("grid.x_max"), parse_int(merged["grid.n_cells"], "grid.n_cells"))
    t_end, dt = num("time.t_end"), num("time.dt")
    if t_end < 0:
        raise ConfigError("time.t_end must be nonnegative")
    if dt <= 0:
        raise ConfigError("time.dt must be positive")
    if abs(round(t_end / dt) * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError("time.t_end must be a multiple of time.dt")
    output_every = num("time.output_every")
    if output_every <= 0:
        raise ConfigError("time.output_every must be positive")
    macro_dt = num("macro.dt")
    if macro_dt <= 0:
        raise ConfigError("macro.dt must be positive")
    mean_source = merged["fp.mean_source"]
    if mean_source not in ("self-consistent", "ode-coupled"):
        raise ConfigError(f"fp.mean_source must be self-consistent or ode-coupled, got {mean_source!r}")
    order = parse_int(merged["fp.order"], "fp.order")
    if order not in (1, 2):
        raise ConfigError("fp.order must be 1 or 2")
    moment_fix = parse_int(merged["fp.moment_fix"], "fp.moment_fix")
    if moment_fix not in (0, 1):
        raise ConfigError("fp.moment_fix must be 0 or 1")
    mc_n = parse_int(merged["mc.n_particles"], "mc.n_particles")
    if mc_n < 1:
        raise ConfigError("mc.n_particles must be positive")
    mc_eps, mc_dt = num("mc.eps"), num("mc.dt")
    if not 0 < mc_eps <= 1:
        raise ConfigError("mc.eps must lie in (0, 1]")
    if mc_dt <= 0:
        raise ConfigError("mc.dt must be positive")
    mc_x_cap = num("mc.x_cap") if merged["mc.x_cap"] != "" else None
    seed = parse_int(merged["run.seed"], "run.seed")
    if seed < 0:
        raise ConfigError("run.seed must be nonnegative")
    ps = parse_list(merged["metrics.p"], "metrics.p")
    for p in ps:
        if not 0.5 < p < 1.5:
            raise ConfigError(f"metrics.p values must lie in (1/2, 3/2), got {p}")
    if merged["output.density_times"].strip():
        dtimes = parse_list(merged["output.density_times"], "output.density_times")
    else:
        dtimes = (0.0, t_end)
    if any(t < 0 or t > t_end for t in dtimes):
        raise ConfigError("output.density_times must lie in [0, time.t_end]")
    if any(abs(round(t / dt) * dt - t) > 1e-9 * max(1.0, t) for t in dtimes):
        raise ConfigError("output.density_times must be multiples of time.dt")
    resolved = tuple(sorted((k, v) for k, v in merged.items() if k != "preset"))
    return Scenario(
        name=merged["name"],
        params=params,
        init_family=family,
        init_means=means,
        init_variances=variances,
        init_files=files,
        grid=grid,
        t_end=t_end,
        dt=dt,
        output_every=output_every,
        macro_dt=macro_dt,
        fp_mean_source=mean_source,
        fp_order=order,
        fp_moment_fix=bool(moment_fix),
        mc_n=mc_n,
        mc_eps=mc_eps,
        mc_dt=mc_dt,
        mc_x_cap=mc_x_cap,
        seed=seed,
        metrics_p=ps,
        density_times=tuple(sorted(set(dtimes))),
        resolved=resolved,
    )


def load_scenario(path=None, preset: str | None = None, overrides: dict | None = None) -> Scenario:
    """Merge preset < file < overrides and validate."""
    file_values = read_file(path) if path is not None else {}
    preset = preset or file_values.get("preset") or None
    values = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}")
        values.update(PRESETS[preset])
    elif path is None:
        raise ConfigError("either a scenario file or a preset is required")
    values.update(file_values)
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"override: unknown key {key!r}")
        values[key] = value
    return build(values)
