import io
import json
import math
import subprocess
import sys

import pytest

from dyndr.cli import main
from dyndr.data import write_csv
from dyndr.simulation import DgpSpec, SimulationReport, generate


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def m2_csv(tmp_path_factory):
    ds, _ = generate(DgpSpec("M2", 200, 10, 5, seed=3), theta=(0.0, 0.0, 0))
    path = tmp_path_factory.mktemp("cli") / "m2.csv"
    write_csv(path, ds)
    return path


def _estimate_args(path, *extra):
    s1 = ",".join(f"s1_{j}" for j in range(1, 11))
    s2 = ",".join(f"s2_{j}" for j in range(1, 6))
    return ["estimate", "--data", str(path), "--s1-cols", s1, "--s2-cols", s2, *extra]


def test_estimate_report_is_finite_and_reproducible(m2_csv):
    code, out, err = run(_estimate_args(m2_csv))
    assert code == 0
    report = json.loads(out)
    assert math.isfinite(report["theta_hat"]) and all(map(math.isfinite, report["ci"]))
    assert report["config"]["seed"] == 42 and report["config"]["folds"] == 5
    assert len(report["per_fold"]) == 5
    assert report["subgroup_counts"]["n"] == 200
    assert report["tuning"]
    assert "theta_hat=" in err
    again = run(_estimate_args(m2_csv))[1]
    assert again == out


def test_estimate_csv_output(m2_csv, tmp_path):
    target = tmp_path / "r.csv"
    code, out, _ = run(_estimate_args(m2_csv, "--format", "csv", "--output", str(target)))
    assert code == 0 and out == ""
    header, row = target.read_text().splitlines()
    assert header.startswith("theta_hat,std_error,ci_lower,ci_upper")
    js = json.loads(run(_estimate_args(m2_csv))[1])
    assert float(row.split(",")[0]) == js["theta_hat"]


def test_missing_column_exit_2(m2_csv):
    code, out, err = run(_estimate_args(m2_csv, "--y-col", "outcome"))
    assert code == 2 and out == ""
    first = json.loads(err.splitlines()[0])
    assert first["exit"] == 2 and "outcome" in first["message"]


def test_bad_level_exit_2(m2_csv):
    code, _, err = run(_estimate_args(m2_csv, "--level", "1.5"))
    assert code == 2
    assert json.loads(err.splitlines()[0])["error"] == "config"


def test_estimation_failure_exit_3(tmp_path):
    ds, _ = generate(DgpSpec("M2", 30, 3, 3, seed=1), theta=(0.0, 0.0, 0))
    path = tmp_path / "tiny.csv"
    write_csv(path, ds)
    code, _, err = run(["estimate", "--data", str(path), "--s1-cols", "s1_1,s1_2,s1_3",
                        "--s2-cols", "s2_1,s2_2,s2_3"])
    assert code == 3
    assert json.loads(err.splitlines()[0])["error"] == "estimation"


def test_unknown_model_exit_2():
    code, _, err = run(["simulate", "--dgp", "M99", "--reps", "1"])
    assert code == 2 and "M99" in err


def test_unknown_flag_exit_2():
    assert run(["simulate", "--dgp", "M2", "--bogus"])[0] == 2


def test_simulate_single_rep_json():
    argv = ["simulate", "--dgp", "M2", "--n", "300", "--d1", "20", "--reps", "1",
            "--estimators", "oracle,empdiff,wipw-oracle", "--threads", "1", "--output", "json"]
    code, out, err = run(argv)
    assert code == 0
    report = json.loads(out)
    assert len(report["raw"]) == 1
    assert set(report["raw"][0]["results"]) == {"oracle", "empdiff", "wipw-oracle"}
    assert "replication 1/1" in err
    parsed = SimulationReport.from_json(out)
    assert parsed.to_json() + "\n" == out
    # Table on the diagnostic stream carries the same numbers as the report.
    lines = [l for l in err.splitlines() if l.split() and l.split()[0] in report["estimators"]]
    assert len(lines) == 3
    for line in lines:
        row = parsed.row(line.split()[0])
        assert [float(x) for x in line.split()[1:7]] == [row.bias, row.rmse, row.length,
                                                         row.coverage, row.esd, row.asd]
    assert run(argv)[1] == out


def test_simulate_csv(tmp_path):
    target = tmp_path / "sim.csv"
    code, out, _ = run(["simulate", "--dgp", "M3", "--n", "200", "--d1", "10", "--reps", "2",
                        "--estimators", "oracle", "--threads", "1", "--format", "csv",
                        "--output", str(target)])
    assert code == 0 and out == ""
    lines = target.read_text().splitlines()
    assert lines[0].startswith("estimator,") and lines[1].startswith("oracle,")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dyndr", "simulate", "--dgp", "M99"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stdout == ""
