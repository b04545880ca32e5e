import filecmp
import json

import pytest

from kinsir.cli import main
from kinsir.errors import ConfigError
from kinsir.scenario import load_scenario, parse_text

FAST = ["--set", "time.t_end=1", "--set", "grid.n_cells=300", "--set", "grid.x_max=30"]


def test_preset_table1():
    sc = load_scenario(preset="paper-table1")
    p = sc.params
    assert (p.alpha, p.beta, p.gamma, p.sigma_s, p.sigma_i) == pytest.approx((1 / 50, 1 / 20, 1 / 14, 1 / 100, 1 / 100))
    assert p.sigma_r == p.alpha and p.theta == 2.0
    assert sc.grid.n_cells == 3001 and sc.grid.x_max == 300.0


def test_fig_caption_preset_needs_alpha():
    with pytest.raises(ConfigError, match="params.alpha"):
        load_scenario(preset="fig-caption")
    sc = load_scenario(preset="fig-caption", overrides={"params.alpha": "0.02"})
    assert sc.params.sigma_r == 0.02


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="<string>: empty"):
        parse_text("# only a comment\n\n")
    with pytest.raises(ConfigError, match=":3: expected"):
        parse_text("name = a\n\nthis line is broken\n")
    with pytest.raises(ConfigError, match=":2: unknown key 'params.betta'"):
        parse_text("name = a\nparams.betta = 1\n")
    with pytest.raises(ConfigError, match=":2: duplicate"):
        parse_text("name = a\nname = b\n")


def test_validation_errors(tmp_path):
    f = tmp_path / "s.cfg"
    f.write_text("preset = paper-table1\nparams.sigma_r = 0.05\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="sigma_r"):
        load_scenario(f)
    f.write_text("preset = paper-table1\ntime.t_end = 1.05\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="multiple"):
        load_scenario(f)


def test_precedence(tmp_path):
    f = tmp_path / "s.cfg"
    f.write_text("preset = paper-table1\nrun.seed = 5\nparams.theta = 3  # comment\n", encoding="utf-8")
    sc = load_scenario(f)
    assert sc.seed == 5 and sc.params.theta == 3.0
    sc = load_scenario(f, overrides={"run.seed": "9"})
    assert sc.seed == 9
    assert load_scenario(f, preset="no-reinfection").params.alpha == 0.0


def test_hash_tracks_resolved_values():
    a = load_scenario(preset="paper-table1")
    b = load_scenario(preset="paper-table1", overrides={"run.seed": "1"})
    assert a.sha256 != b.sha256
    assert a.sha256 == load_scenario(preset="paper-table1").sha256


def _run(args):
    return main(args)


def test_exit_codes(tmp_path):
    empty = tmp_path / "empty.cfg"
    empty.write_text("", encoding="utf-8")
    assert _run(["macro", "--scenario", str(empty), "--out", str(tmp_path / "o")]) == 2
    assert _run(["macro", "--preset", "paper-table1", "--set", "params.beta=2", "--out", str(tmp_path / "o")]) == 2
    assert _run(["macro", "--scenario", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 4
    blocker = tmp_path / "file"
    blocker.write_text("x", encoding="utf-8")
    assert _run(["macro", "--preset", "paper-table1", "--out", str(blocker / "sub")]) == 4
    overflow = ["--set", "mc.dt=0.5", "--set", "mc.eps=1", "--set", "time.t_end=1", "--set", "mc.n_particles=10"]
    assert _run(["mc", "--preset", "paper-table1", "--out", str(tmp_path / "o"), *overflow]) == 3


def test_zero_horizon_emits_initial_snapshots(tmp_path):
    out = tmp_path / "o"
    assert _run(["fp", "--preset", "paper-table1", "--out", str(out), *FAST, "--set", "time.t_end=0"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == [
        "density_I_0.csv",
        "density_R_0.csv",
        "density_S_0.csv",
        "metrics.csv",
        "moments.csv",
        "report.json",
    ]
    rows = (out / "moments.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[2].startswith("fp,0,")


def test_file_formats(tmp_path):
    out = tmp_path / "o"
    assert _run(["fp", "--preset", "paper-table1", "--out", str(out), *FAST]) == 0
    report = json.loads((out / "report.json").read_text())
    digest = report["scenario_sha256"]
    for name in ("moments.csv", "metrics.csv", "density_S_1.csv"):
        lines = (out / name).read_text().splitlines()
        assert lines[0] == f"# kinsir scenario_sha256={digest}"
    assert (out / "moments.csv").read_text().splitlines()[1] == "source,t,m_S,m_I,m_R,V_S,V_I,V_R"
    assert (out / "metrics.csv").read_text().splitlines()[1] == "compartment,t,E_0.625,E_0.75,E_0.875"
    assert (out / "density_S_1.csv").read_text().splitlines()[1] == "x,f"
    # 17 significant digits round-trip exactly
    value = (out / "density_S_1.csv").read_text().splitlines()[2].split(",")[0]
    assert float(value) == 0.05


def test_compare_has_three_sources_on_one_axis(tmp_path):
    out = tmp_path / "o"
    args = ["compare", "--preset", "paper-table1", "--out", str(out), *FAST, "--set", "mc.n_particles=200"]
    assert _run(args) == 0
    rows = [r.split(",") for r in (out / "moments.csv").read_text().splitlines()[2:]]
    by_source = {}
    for r in rows:
        by_source.setdefault(r[0], []).append(float(r[1]))
    assert set(by_source) == {"macro", "fp", "mc"}
    assert by_source["macro"] == by_source["fp"] == pytest.approx(by_source["mc"])
    assert "compare" in json.loads((out / "report.json").read_text())


def test_byte_identical_reruns_and_jobs(tmp_path, monkeypatch):
    cfg_a = tmp_path / "a.cfg"
    cfg_b = tmp_path / "b.cfg"
    body = "preset = paper-table1\ntime.t_end = 1\nmc.n_particles = 300\nmc.eps = 1\n"
    cfg_a.write_text(body, encoding="utf-8")
    cfg_b.write_text(body + "run.seed = 4\n", encoding="utf-8")
    assert _run(["mc", "--scenario", str(cfg_a), str(cfg_b), "--out", str(tmp_path / "serial")]) == 0
    monkeypatch.setenv("KINSIR_OUT", str(tmp_path / "parallel"))
    assert _run(["mc", "--scenario", str(cfg_a), str(cfg_b), "--jobs", "2"]) == 0
    for name in ("a", "b"):
        cmp = filecmp.dircmp(tmp_path / "serial" / name, tmp_path / "parallel" / name)
        assert cmp.left_list == cmp.right_list
        _, mismatch, errors = filecmp.cmpfiles(cmp.left, cmp.right, cmp.common_files, shallow=False)
        assert not mismatch and not errors
    a = (tmp_path / "serial" / "a" / "moments.csv").read_text()
    b = (tmp_path / "serial" / "b" / "moments.csv").read_text()
    assert a.splitlines()[3:] != b.splitlines()[3:]


def test_seed_flag_overrides(tmp_path):
    args = ["mc", "--preset", "paper-table1", "--set", "time.t_end=1", "--set", "mc.n_particles=100", "--set", "mc.eps=1"]
    assert _run([*args, "--seed", "3", "--out", str(tmp_path / "x")]) == 0
    report = json.loads((tmp_path / "x" / "report.json").read_text())
    assert report["mc"]["seed"] == 3 and report["resolved"]["run.seed"] == "3"


def test_analytic_no_reinfection(tmp_path):
    out = tmp_path / "o"
    assert _run(["analytic", "--preset", "no-reinfection", "--out", str(out), "--set", "grid.n_cells=2400"]) == 0
    rep = json.loads((out / "report.json").read_text())["analytic"]
    assert rep["m_S_inf"] == pytest.approx(0.1325317, abs=1e-7)
    assert rep["shift"] == pytest.approx(4.867468, abs=1e-6)
    assert (out / "density_S_inf.csv").exists() and (out / "density_R_inf.csv").exists()


def test_file_initial_family_roundtrip(tmp_path):
    first = tmp_path / "first"
    assert _run(["fp", "--preset", "paper-table1", "--out", str(first), *FAST, "--set", "time.t_end=0"]) == 0
    cfg = tmp_path / "f.cfg"
    cfg.write_text(
        "preset = paper-table1\ninit.family = file\n"
        + "".join(f"init.file_{c.lower()} = {first / f'density_{c}_0.csv'}\n" for c in "SIR")
        + "time.t_end = 0\ngrid.n_cells = 300\ngrid.x_max = 30\n",
        encoding="utf-8",
    )
    second = tmp_path / "second"
    assert _run(["fp", "--scenario", str(cfg), "--out", str(second)]) == 0
    a = (first / "density_I_0.csv").read_text().splitlines()[1:]
    b = (second / "density_I_0.csv").read_text().splitlines()[1:]
    assert a == b
