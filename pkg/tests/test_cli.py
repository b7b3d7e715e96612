import json

import numpy as np
import pytest

from isodamp import __version__, cli, fixtures

SIM = {"multipliers": [1.0, 7.0], "horizon": 10.0, "dt": 0.01}


def run(tmp_path, cfg, command="all", extra=()):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    return cli.main([command, "--config", str(path), "--out", str(out), *extra]), out


def write_csv(path, plant, **kw):
    cli.write_rod_drop_csv(path, *fixtures.synthetic_rod_drop(plant, **kw))


def test_version(capsys):
    assert cli.main(["--version"]) == 0
    out = capsys.readouterr().out
    assert __version__ in out and fixtures.catalog_hash()[:16] in out


def test_identify_from_csv(tmp_path):
    write_csv(tmp_path / "d.csv", fixtures.get("G70_foptd").to_tf())
    code, out = run(tmp_path, {"data": {"csv": str(tmp_path / "d.csv")}}, "identify")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())["identify"]
    np.testing.assert_allclose(rep["dc_gain"], 136.3, rtol=0.05)
    assert rep["stable"] and "free_run_rms" in rep and "nonminimum_phase" in rep


def test_identify_noisy_csv_falls_back_to_real_logarithm(tmp_path):
    write_csv(tmp_path / "d.csv", fixtures.get("G70_soptd").to_tf(), noise_std=0.01)
    code, out = run(tmp_path, {"data": {"csv": str(tmp_path / "d.csv")}}, "identify")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())["identify"]
    np.testing.assert_allclose(rep["dc_gain"], 136.4, rtol=0.05)


def test_identify_from_published_full_model(tmp_path):
    write_csv(tmp_path / "d.csv", fixtures.get("G100_full"), Ts=0.1, duration=14.0)
    code, out = run(tmp_path, {"data": {"csv": str(tmp_path / "d.csv")}}, "identify")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())["identify"]
    np.testing.assert_allclose(rep["dc_gain"], 192.3, rtol=0.05)
    # the record inherits the published model's right-half-plane poles
    assert rep["stable"] is False


def test_missing_column_named(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("time_s,rod_fraction\n0,0\n0.1,0\n0.2,0\n0.3,0\n")
    code, _ = run(tmp_path, {"data": {"csv": str(tmp_path / "d.csv")}}, "identify")
    assert code == 1
    assert "power_pct" in capsys.readouterr().err


def test_malformed_row_line_number(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("time_s,rod_fraction,power_pct\n0,0,100\n0.1,x,100\n0.2,0,100\n")
    code, _ = run(tmp_path, {"data": {"csv": str(tmp_path / "d.csv")}}, "identify")
    assert code == 1
    assert "line 3" in capsys.readouterr().err


def test_jitter_rejected(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("time_s,rod_fraction,power_pct\n0,0,100\n0.1,0,100\n0.2001,0,100\n0.3,0,100\n")
    code, _ = run(tmp_path, {"data": {"csv": str(tmp_path / "d.csv")}}, "identify")
    assert code == 1
    assert "non-uniform" in capsys.readouterr().err


def test_fixture_passthrough(tmp_path):
    code, out = run(tmp_path, {"data": {"fixture": "G100_full"}}, "identify")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())["identify"]
    assert rep["source"] == "fixture"
    assert rep["model"] == fixtures.get("G100_full").to_dict()


def test_unknown_key_rejected(tmp_path):
    code, _ = run(tmp_path, {"data": {"fixture": "G70_foptd"}, "extra": 1})
    assert code == 1


def test_empty_multipliers_rejected(tmp_path):
    code, out = run(tmp_path, {"data": {"fixture": "G70_foptd"}, "simulation": {"multipliers": []}})
    assert code == 1 and not (out / "report.json").exists()


def test_design_infeasible_exit_code(tmp_path, capsys):
    cfg = {"data": {"fixture": "G70_foptd"}, "controller": {"fixture": "pid_foptd"}, "shaper": {"phi_md_deg": 89}}
    code, _ = run(tmp_path, cfg, "design")
    assert code == 3
    assert "binding constraint" in capsys.readouterr().err


@pytest.mark.xfail(strict=True, reason="the published shaper does not flatten the phase of its design loop")
@pytest.mark.parametrize("kind", ["foptd", "soptd"])
def test_design_report_flat_band(tmp_path, kind):
    cfg = {"data": {"fixture": f"G70_{kind}"}, "controller": {"fixture": f"pid_{kind}"}}
    code, out = run(tmp_path, cfg, "design")
    assert code == 0
    d = json.loads((out / "report.json").read_text())["design"]
    assert d["flat_band"]["decades"] >= 0.5 and d["margins_after"]["phi_m_deg"] >= 30


def _fixture_cfg(kind="foptd", **sim):
    return {
        "data": {"fixture": f"G70_{kind}"},
        "controller": {"fixture": f"pid_{kind}", "tau_f": 0.01},
        "shaper": {"fixture": f"shaper_{kind}"},
        "simulation": {**SIM, **sim},
    }


def test_design_report_from_fixtures(tmp_path):
    code, out = run(tmp_path, _fixture_cfg(), "design")
    assert code == 0
    d = json.loads((out / "report.json").read_text())["design"]
    assert d["shaper"]["params"]["q"] == 0.6181
    assert d["margins_after"]["phi_m_deg"] >= 30
    for name in ("plant", "plant_pid", "plant_pid_shaper"):
        head = (out / f"design__bode_{name}.csv").read_text().splitlines()[0]
        assert head == "omega,magnitude_db,phase_deg"


def test_simulate_writes_cells_and_records_failures(tmp_path):
    pipes = [{"name": "foptd", "family": "foptd"},
             {"name": "soptd", "family": "soptd", "controller": "pid_soptd", "shaper": "shaper_soptd"}]
    code, out = run(tmp_path, _fixture_cfg(pipelines=pipes))
    assert code == 0
    sim = json.loads((out / "report.json").read_text())["simulate"]
    names = [r["scenario"] for r in sim["metrics"]]
    assert sum(n.startswith("stepback_") for n in names) == 8
    assert set(sim["settling_by_pipeline"]) == {"foptd", "soptd"}
    # gain x7 destabilizes the loop: recorded per cell, not fatal
    assert any(r["error"] for r in sim["metrics"])
    assert (out / "stepback_foptd_p70__power.csv").exists()
    assert (out / "stepback_foptd_p70__controller_output.csv").exists()
    assert (out / "metrics.txt").read_text().startswith("scenario")


@pytest.mark.xfail(strict=True, reason="the published shaper does not flatten the phase of its design loop")
def test_simulate_gain_sweep_undershoot(tmp_path):
    code, out = run(tmp_path, _fixture_cfg())
    rows = json.loads((out / "metrics.json").read_text())
    shaped = [r for r in rows if r["scenario"].startswith("iso_shaped")]
    assert all(r["error"] is None and r["undershoot_pct"] <= 2 for r in shaped)


def test_deterministic_and_round_trip(tmp_path):
    code, out = run(tmp_path, _fixture_cfg())
    assert code == 0
    resolved = out / "config.resolved.json"
    out2 = tmp_path / "out2"
    assert cli.main(["all", "--config", str(resolved), "--out", str(out2)]) == 0
    for f in out.iterdir():
        assert f.read_bytes() == (out2 / f.name).read_bytes(), f.name


def test_overrides(tmp_path):
    code, out = run(tmp_path, _fixture_cfg(), "design", ("--pade-order", "3", "--carlson-order", "2"))
    assert code == 0
    cfg = json.loads((out / "config.resolved.json").read_text())
    assert cfg["simulation"]["pade_order"] == 3 and cfg["shaper"]["carlson_order"] == 2


def test_fixture_shortcut(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["identify", "--fixture", "G80_full", "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["identify"]["fixture"] == "G80_full"


def test_simulate_without_design(tmp_path):
    code, _ = run(tmp_path, _fixture_cfg(), "simulate")
    assert code == 1
