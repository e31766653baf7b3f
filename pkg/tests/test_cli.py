import csv
import subprocess
import sys

import pytest

from evcoord import cli, network as nw
from evcoord.reporting import MONTECARLO_FILES, SCENARIO_FILES

SMALL = """\
version: 1
fleet: {n_vehicles: 6}
policies: [uncoordinated, global-async, local-async]
montecarlo: {draws: 2, fleet_sizes: [4, 6], policies: [uncoordinated, global-async]}
seed: 11
"""


def write_config(tmp_path, text=SMALL, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_solve(tmp_path):
    assert run("solve", "--out", tmp_path / "o") == 0
    info = read_csv(tmp_path / "o" / "solve_info.csv")[0]
    assert float(info["max_residual_pu"]) <= 1e-8
    assert info["min_v_node"] == "34"


def test_sensitivity(tmp_path):
    assert run("sensitivity", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "sensitivity.csv")
    assert len(rows) == 33 and all(float(rows[0][k]) > 0 for k in rows[0] if k != "pilot")


def test_scenario_files(tmp_path):
    cfg = write_config(tmp_path)
    assert run("scenario", "--config", cfg, "--out", tmp_path / "o") == 0
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == sorted(SCENARIO_FILES)
    summary = read_csv(tmp_path / "o" / "summary.csv")
    assert [r["policy"] for r in summary] == ["uncoordinated", "global-async", "local-async"]
    assert all(r["soc_violations"] == "0" for r in summary)


def test_metric_and_policy_flags(tmp_path):
    cfg = write_config(tmp_path)
    assert run("scenario", "--config", cfg, "--out", tmp_path, "--metric", "crenel",
               "--policy", "global-sync") == 0
    (row,) = read_csv(tmp_path / "summary.csv")
    assert row["metric"] == "crenel" and row["policy"] == "global-sync"


def test_montecarlo_single_draw(tmp_path):
    cfg = write_config(tmp_path)
    assert run("montecarlo", "--config", cfg, "--out", tmp_path, "--draws", "1", "--fleet-sizes", "3") == 0
    assert sorted(p.name for p in tmp_path.iterdir() if p.suffix == ".csv") == sorted(MONTECARLO_FILES)
    rows = read_csv(tmp_path / "report.csv")
    assert {r["policy"] for r in rows} == {"uncoordinated", "global-async"}
    assert all(float(r["std_min_v"]) == 0.0 for r in rows)


@pytest.mark.parametrize("command", ["scenario", "montecarlo"])
def test_reruns_are_byte_identical(tmp_path, command):
    cfg = write_config(tmp_path)
    for out in ("a", "b"):
        assert run(command, "--config", cfg, "--out", tmp_path / out, "--seed", "3") == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_seed_changes_output(tmp_path):
    cfg = write_config(tmp_path)
    run("scenario", "--config", cfg, "--out", tmp_path / "a", "--seed", "1")
    run("scenario", "--config", cfg, "--out", tmp_path / "b", "--seed", "2")
    assert (tmp_path / "a" / "vehicles.csv").read_bytes() != (tmp_path / "b" / "vehicles.csv").read_bytes()


def test_calibrate(tmp_path):
    cfg = write_config(tmp_path, "version: 1\ncalibrate: {target_v: 0.93, tolerance: 0.01, n_vehicles: 10, "
                                 "draws: 2, output: cal.csv}\n")
    assert run("calibrate", "--config", cfg, "--out", tmp_path / "o") == 0
    feeder = nw.read_feeder(tmp_path / "o" / "cal.csv")
    assert feeder.n_buses == 34
    steps = read_csv(tmp_path / "o" / "calibration.csv")
    assert abs(float(steps[-1]["mean_uncoordinated_min_v"]) - 0.93) <= 0.01


def test_missing_feeder_names_the_path(tmp_path, capsys):
    cfg = write_config(tmp_path, "version: 1\nfeeder: nowhere/feeder.csv\n")
    assert run("solve", "--config", cfg, "--out", tmp_path) == 1
    assert "nowhere/feeder.csv" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path, capsys):
    cfg = write_config(tmp_path, "version: 1\nfleet:\n  n_vehicles: 3\n  colour: red\n")
    assert run("solve", "--config", cfg, "--out", tmp_path) == 1
    err = capsys.readouterr().err
    assert "run.yaml:4" in err and "fleet.colour" in err


def test_usage_error_exit_code(tmp_path):
    with pytest.raises(SystemExit) as info:
        run("scenario", "--policy", "greedy", "--out", tmp_path)
    assert info.value.code == 1


def test_numerical_failure_exit_code(tmp_path):
    nw.write_feeder(nw.surrogate_template(r_ohm=5.0, x_ohm=5.0, base_p_kw=20.0), tmp_path / "weak.csv")
    cfg = write_config(tmp_path, "version: 1\nfeeder: weak.csv\n")
    assert run("solve", "--config", cfg, "--out", tmp_path / "o") == 2


def test_infeasible_fleet_exit_code(tmp_path):
    (tmp_path / "fleet.csv").write_text(
        "id,node,soc_init_kwh,soc_min_kwh,soc_max_kwh,p_max_kw,arrival_slot,departure_slot\n"
        "1,20,0.0,24.0,24.0,3.3,3,4\n")
    cfg = write_config(tmp_path, "version: 1\nfleet: {file: fleet.csv}\npolicies: [uncoordinated]\n")
    assert run("scenario", "--config", cfg, "--out", tmp_path / "o") == 3


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "evcoord.cli", "solve", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "voltages.csv").is_file()
