import numpy as np
import pytest
import yaml

from arzobs import cli, config
from arzobs.errors import ConfigError


def doc(**sections):
    d = {"schema": config.SCHEMA}
    d.update(sections)
    return d


def test_defaults_resolve():
    cfg = config.resolve(doc())
    assert cfg["model"]["tau"] == 60.0
    assert cfg["grid"]["num_cells"] == 41


@pytest.mark.parametrize("d,path", [
    ({"model": {"tau": -1}}, "model.tau"),
    ({"grid": {"num_cells": 2.5}}, "grid.num_cells"),
    ({"grid": {"dt": "fast"}}, "grid.dt"),
    ({"observer": {"exponent": "middle"}}, "observer.exponent"),
    ({"reference": {"rho_star": 0.5}}, "reference.rho_star"),
    ({"model": {"fd": {"family": "greenshield", "v_f": 40, "rho_m": -0.1, "gamma": 1}}}, "model.fd"),
    ({"initial": {"amplitude": 1.5}}, "initial.amplitude"),
    ({"data": {"domain": [0, 1]}}, "data.domain"),
    ({"grid": {"cell_count": 10}}, "grid.cell_count"),
    ({"grid": 5}, "grid"),
])
def test_invalid_fields_are_named(d, path):
    with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
        config.resolve(doc(**d))


def test_schema_required():
    with pytest.raises(ConfigError, match="schema"):
        config.resolve({"model": {"tau": 30}})
    with pytest.raises(ConfigError, match="schema"):
        config.resolve({"schema": "something/2"})


def test_load_and_dump_round_trip(tmp_path):
    cfg = config.resolve(doc(model={"tau": 30.0}))
    path = tmp_path / "c.yaml"
    config.dump(cfg, path)
    assert config.load(path) == cfg


def test_shipped_config_is_valid():
    from pathlib import Path
    cfg = config.load(Path(__file__).parents[1] / "configs" / "base.yaml")
    assert cfg["reference"]["rho_star"] == 0.12


def write_cfg(tmp_path, **sections):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(doc(**sections)))
    return str(path)


def run_cli(*argv):
    return cli.main(list(argv))


def test_gains_last_row_is_outlet(tmp_path):
    out = tmp_path / "g"
    assert run_cli("gains", "--out", str(out)) == 0
    data = np.loadtxt(out / "gains.csv", delimiter=",", skiprows=1)
    assert data[-1, 0] == 400.0
    assert data[-1, 1] == pytest.approx(20 / 1800, rel=1e-12)
    cfg = write_cfg(tmp_path, observer={"gain_form": "shifted"})
    assert run_cli("gains", "--config", cfg, "--out", str(tmp_path / "s")) == 0
    shifted = np.loadtxt(tmp_path / "s" / "gains.csv", delimiter=",", skiprows=1)
    assert shifted[-1, 1] == pytest.approx(10 / 1800, rel=1e-12)


def test_gains_refuse_free_flow(tmp_path):
    cfg = write_cfg(tmp_path, reference={"rho_star": 0.04})
    assert run_cli("gains", "--config", cfg, "--out", str(tmp_path)) == 2


def test_manual_dt_above_cfl_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, grid={"dt": 1.0, "total_time": 10.0})
    assert run_cli("simulate", "--config", cfg, "--out", str(tmp_path)) == 2
    assert "grid.dt" in capsys.readouterr().err


def test_mid_run_cfl_violation_exits_3(tmp_path):
    cfg = write_cfg(tmp_path, initial={"amplitude": 0.5, "waves": 5}, grid={"cfl_safety": 1.0})
    assert run_cli("simulate", "--config", cfg, "--out", str(tmp_path)) == 3


def test_bad_trajectory_file_exits_4(tmp_path):
    bad = tmp_path / "traj.csv"
    bad.write_text("vehicle_id,time_s\n1,0.0\n")
    cfg = write_cfg(tmp_path, data={"trajectories": str(bad)})
    assert run_cli("aggregate", "--config", cfg, "--out", str(tmp_path)) == 4


def test_aggregate_needs_trajectories(tmp_path):
    assert run_cli("aggregate", "--out", str(tmp_path)) == 2


def test_simulate_is_byte_reproducible(tmp_path):
    cfg = write_cfg(tmp_path, grid={"total_time": 30.0})
    for name in ("a", "b"):
        assert run_cli("simulate", "--config", cfg, "--out", str(tmp_path / name)) == 0
    for f in ("trajectory.csv", "measurements.csv", "resolved_config.yaml"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_units_round_trip(tmp_path):
    cfg = write_cfg(tmp_path, grid={"total_time": 20.0})
    for units in ("si", "traffic"):
        assert run_cli("simulate", "--config", cfg, "--units", units, "--out", str(tmp_path / units)) == 0
    a = cli.read_measurements(tmp_path / "si" / "measurements.csv", 2.0)
    b = cli.read_measurements(tmp_path / "traffic" / "measurements.csv", 2.0)
    for name in ("times", "q_in", "q_out", "v_out"):
        assert np.allclose(getattr(a, name), getattr(b, name), rtol=1e-14, atol=0)
    head = (tmp_path / "traffic" / "trajectory.csv").read_text().splitlines()[0]
    assert head == "t,x,rho_veh_per_km,v_km_per_h"


def test_observe_twin_writes_summary(tmp_path):
    cfg = write_cfg(tmp_path, grid={"total_time": 120.0})
    assert run_cli("observe", "--config", cfg, "--out", str(tmp_path)) == 0
    line = (tmp_path / "summary.txt").read_text()
    tc = float(line.split()[0].split("=")[1])
    assert 30.0 < tc < 100.0
    errs = np.loadtxt(tmp_path / "errors.csv", delimiter=",", skiprows=1)
    assert errs[-1, 1] < 0.01


def test_observe_from_measurement_file(tmp_path):
    cfg = write_cfg(tmp_path, grid={"total_time": 20.0})
    assert run_cli("simulate", "--config", cfg, "--out", str(tmp_path / "sim")) == 0
    cfg2 = write_cfg(tmp_path, grid={"total_time": 20.0},
                     data={"measurements": str(tmp_path / "sim" / "measurements.csv")})
    assert run_cli("observe", "--config", cfg2, "--out", str(tmp_path / "obs")) == 0
    assert (tmp_path / "obs" / "estimate.csv").exists()


def test_validate_expect_mismatch(tmp_path):
    from arzobs import ingest
    t = np.arange(0.0, 10.01, 0.5)
    traj = ingest.TrajectoryDataset(np.zeros(t.shape, int), t, 10.0 * t, 0.5)
    path = tmp_path / "one.csv"
    ingest.write_trajectory_csv(traj, path)
    cfg = write_cfg(tmp_path, data={"trajectories": str(path), "n_time_cells": 1, "n_space_cells": 1})
    assert run_cli("validate", "--config", cfg, "--out", str(tmp_path)) == 0
    # one vehicle over 100 m for 10 s: 10 veh/km, 36 km/h, 360 veh/h
    assert run_cli("validate", "--config", cfg, "--out", str(tmp_path), "--expect", "10,36,360") == 0
    assert run_cli("validate", "--config", cfg, "--out", str(tmp_path), "--expect", "11,36,360") == 4
    assert run_cli("validate", "--config", cfg, "--out", str(tmp_path), "--expect", "1,2") == 2
