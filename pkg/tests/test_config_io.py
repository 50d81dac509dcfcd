"""Config parsing/validation, output formats and the CLI front door."""

import json
import os

import numpy as np
import pytest

from thermovisc.cli import main as cli_main
from thermovisc.config import ConfigError, parse_config
from thermovisc.grid import StructuredGrid
from thermovisc.outputs import (
    TIMESERIES_COLUMNS,
    emit_outputs,
    read_field_dump,
    read_timeseries,
    write_field_dump,
)
from thermovisc.presets import shear_pulse
from thermovisc.scheme import run

MINIMAL = """
[grid]
extents = 6 6

[time]
T = 0.2
tau = 0.05
eps = 0.01
"""


def test_minimal_config_gets_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.scenario == "steady"
    assert cfg.extents == [6, 6]
    assert cfg.lengths == [1.0, 1.0]
    assert cfg.dirichlet == ["y0"]
    assert cfg.material.nu == 1.0
    assert cfg.solver.tol_mech == 1e-8
    assert cfg.directory == "out"


def test_admissibility_violation_message():
    bad = MINIMAL + "\n[material]\nq = 3\np = 4\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    msg = str(exc.value)
    assert "q >= pd/(p-d) violated" in msg
    assert "needs q >= 4" in msg


def test_all_violations_reported_not_first_failure():
    bad = MINIMAL + "\n[material]\nnu = 0\nq = 3\n\n[loads]\ntheta0 = -1\n"
    bad = bad.replace("tau = 0.05", "tau = 0.03")
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    errs = exc.value.errors
    assert len(errs) >= 4
    joined = "\n".join(errs)
    assert "nu > 0" in joined
    assert "q >= pd/(p-d)" in joined
    assert "theta0" in joined
    assert "T/tau" in joined


def test_unknown_key_suggests_nearest():
    bad = MINIMAL + "\n[loads]\namplituda = 0.1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    assert "nearest valid key: amplitude" in str(exc.value)


def test_roundtrip_serialize_parse():
    cfg = parse_config(MINIMAL + "\n[loads]\nscenario = shear_pulse\namplitude = 0.125\n")
    text = cfg.serialize()
    cfg2 = parse_config(text)
    assert cfg2.serialize() == text
    assert cfg2.amplitude == cfg.amplitude
    assert cfg2.material == cfg.material
    assert cfg2.solver == cfg.solver


def test_light_diagnostics_disables_eigensolves():
    cfg = parse_config(MINIMAL + "\n[output]\ndiagnostics = light\n")
    assert cfg.solver.korn_every == 0 and cfg.solver.hk_every == 0


def test_refine_presets_carry_default_lists():
    cfg = parse_config(MINIMAL + "\n[loads]\nscenario = refine_tau\n")
    assert cfg.tau_list == [0.1, 0.05, 0.025, 0.0125]
    assert cfg.eps_list == [0.01]
    sc = cfg.build_scenario()
    assert sc.name == "refine_tau"
    cfg2 = parse_config(MINIMAL + "\n[loads]\nscenario = refine_eps\n")
    assert cfg2.eps_list == [0.1, 0.01, 0.001]
    assert cfg2.build_scenario().name == "refine_eps"


# ---------------------------------------------------------------------------
# outputs


@pytest.fixture(scope="module")
def small_traj():
    grid = StructuredGrid((5, 5), (1.0, 1.0), dirichlet_faces=("y0",))
    sc = shear_pulse(grid=grid, T=0.1, amplitude=0.1, t_pulse=0.08)
    return run(sc, tau=0.05, eps=0.01)


def test_timeseries_schema_and_roundtrip(tmp_path, small_traj):
    report = emit_outputs(small_traj, str(tmp_path))
    data = read_timeseries(tmp_path / "timeseries.csv")
    assert list(data) == TIMESERIES_COLUMNS
    assert len(data["t"]) == small_traj.n_steps
    # 17 significant digits: values round-trip exactly
    for k, d in enumerate(small_traj.step_diags):
        assert data["E"][k] == d.E
        assert data["min_detF"][k] == d.min_detF
    assert report["all_passed"]


def test_field_dump_roundtrip(tmp_path, small_traj):
    snap = small_traj.snapshots[-1]
    path = str(tmp_path / "f.bin")
    write_field_dump(path, step=snap.k, t=snap.t, grid=small_traj.grid,
                     config_hash="cafe", arrays={"y": snap.y.values.ravel(),
                                                 "w": snap.w_qp.ravel()})
    meta, arrays = read_field_dump(path)
    assert meta["config_hash"] == "cafe"
    assert int(meta["step"]) == snap.k
    assert np.array_equal(arrays["y"], snap.y.values.ravel())
    assert np.array_equal(arrays["w"], snap.w_qp.ravel())
    with open(path, "rb") as fh:
        assert fh.readline().startswith(b"THERMOVISC-FIELDS 1")


def test_outputs_byte_identical_across_runs(tmp_path):
    grid_args = dict(extents=(5, 5), lengths=(1.0, 1.0), dirichlet_faces=("y0",))
    outs = []
    for sub in ("a", "b"):
        grid = StructuredGrid(**grid_args)
        sc = shear_pulse(grid=grid, T=0.1, amplitude=0.1, t_pulse=0.08)
        traj = run(sc, tau=0.05, eps=0.01)
        d = tmp_path / sub
        emit_outputs(traj, str(d), config_hash="x")
        outs.append(d)
    for name in sorted(os.listdir(outs[0])):
        b1 = (outs[0] / name).read_bytes()
        b2 = (outs[1] / name).read_bytes()
        assert b1 == b2, f"{name} differs between identical runs"


def test_steady_timeseries_rate_columns_zero(tmp_path):
    from thermovisc.presets import steady
    grid = StructuredGrid((5, 5), (1.0, 1.0), dirichlet_faces=("y0",))
    traj = run(steady(grid=grid, T=0.1), tau=0.05, eps=0.01)
    emit_outputs(traj, str(tmp_path / "s"))
    data = read_timeseries(tmp_path / "s" / "timeseries.csv")
    for col in ("xi_step", "xi_reg_step", "ext_power", "boundary_heat",
                "entropy_prod", "energy_gap_total"):
        assert np.allclose(data[col], 0.0, atol=1e-12), col


def test_report_json_structure(tmp_path, small_traj):
    emit_outputs(small_traj, str(tmp_path / "r"))
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report["scenario"] == "shear_pulse"
    assert isinstance(report["checks"], list)
    assert all({"name", "passed", "value", "threshold"} <= set(c) for c in report["checks"])


# ---------------------------------------------------------------------------
# CLI


def write_cfg(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_cli_validate_ok_and_bad(tmp_path, capsys):
    path = write_cfg(tmp_path, MINIMAL)
    assert cli_main(["validate", path]) == 0
    bad = write_cfg(tmp_path, MINIMAL + "\n[material]\nq = 3\n")
    assert cli_main(["validate", bad]) == 1
    out = capsys.readouterr().out
    assert "violation" in out


def test_cli_simulate_writes_outputs(tmp_path, capsys):
    cfg = MINIMAL.replace("extents = 6 6", "extents = 5 5").replace("T = 0.2", "T = 0.1")
    cfg += "\n[loads]\nscenario = shear_pulse\namplitude = 0.1\nt_pulse = 0.08\n"
    path = write_cfg(tmp_path, cfg)
    out = str(tmp_path / "out")
    assert cli_main(["simulate", path, "--out", out]) == 0
    assert (tmp_path / "out" / "timeseries.csv").exists()
    assert (tmp_path / "out" / "report.json").exists()
    assert (tmp_path / "out" / "fields_000000.bin").exists()
    assert "PASS" in capsys.readouterr().out


def test_cli_refine_writes_cauchy_table(tmp_path):
    cfg = MINIMAL.replace("extents = 6 6", "extents = 5 5").replace("T = 0.2", "T = 0.1")
    cfg += "\n[loads]\nscenario = shear_pulse\namplitude = 0.1\nt_pulse = 0.08\n"
    path = write_cfg(tmp_path, cfg)
    out = str(tmp_path / "ref")
    code = cli_main(["refine", path, "--tau-list", "0.05", "0.025", "--eps-list", "0.01", "--out", out])
    assert code == 0
    table = (tmp_path / "ref" / "cauchy.csv").read_text().splitlines()
    assert table[0] == "eps,tau_coarse,tau_fine,dy_grad_l2,dtheta_l2"
    assert len(table) == 2
    assert (tmp_path / "ref" / "refine_report.json").exists()
