import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dhnet.cli import main


@pytest.fixture
def star_file(tmp_path):
    path = tmp_path / "net.json"
    assert main(["gen-network", "--kind", "star", "--consumers", "3", "--seed", "1", "--out", str(path)]) == 0
    return path


def _scenario(tmp_path, **extra):
    spec = {"t_end": 7200, "injection": {"value": 90, "unit": "degC"}, "demand": {"profile": "two-peak", "mean": 3e4, "max": 4.5e4}}
    spec.update(extra)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(spec))
    return path


def test_gen_network_stdout(capsys):
    assert main(["gen-network", "--kind", "two-loop", "--consumers", "4"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert sum(a["kind"] == "consumer" for a in data["arcs"]) == 4


def test_simulate_writes_outputs(tmp_path, star_file):
    out = tmp_path / "run"
    rc = main([
        "simulate", "--network", str(star_file), "--scenario", str(_scenario(tmp_path)),
        "--dt", "300", "--t-end", "7200", "--mesh-dx", "10", "--out", str(out),
    ])
    assert rc == 0
    rows = list(csv.DictReader(open(out / "trajectory.csv")))
    assert len(rows) == 24 and float(rows[-1]["t"]) == 7200
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 24 and summary["violations"] == 0


def test_simulate_reports_violations(tmp_path, star_file):
    sc = _scenario(tmp_path, bounds={"T_ff_max": 80.0})
    rc = main([
        "simulate", "--network", str(star_file), "--scenario", str(sc),
        "--dt", "300", "--t-end", "1800", "--mesh-dx", "10", "--out", str(tmp_path / "o"),
    ])
    assert rc == 2


def test_simulate_failures(tmp_path, star_file):
    base = ["simulate", "--network", str(star_file), "--dt", "300", "--mesh-dx", "10", "--out", str(tmp_path / "o")]
    assert main(base + ["--scenario", str(tmp_path / "missing.json"), "--t-end", "1800"]) == 1
    # horizon not a multiple of the step
    assert main(base + ["--scenario", str(_scenario(tmp_path)), "--t-end", "1000"]) == 1
    # no temperature drop at the consumers
    cold = _scenario(tmp_path, injection={"value": 60, "unit": "degC"})
    assert main(base + ["--scenario", str(cold), "--t-end", "1800"]) == 1


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 1


def test_check_ph(star_file, capsys):
    assert main(["check-ph", "--network", str(star_file), "--samples", "5"]) == 0
    out = capsys.readouterr().out
    assert "J skew" in out and "FAIL" not in out


def test_check_generic(capsys):
    assert main(["check-generic", "--cells", "16", "--refinements", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 4


def test_optimize_peak(tmp_path):
    net = tmp_path / "net.json"
    main(["gen-network", "--kind", "star", "--consumers", "2", "--seed", "1", "--out", str(net)])
    t = np.arange(0, 12 * 3600 + 1, 600)
    P = 2e4 + 1.5e4 * np.exp(-0.5 * ((t / 3600 - 8) / 1.0) ** 2)
    dem = tmp_path / "demand.csv"
    dem.write_text("t,P\n" + "".join(f"{a},{b}\n" for a, b in zip(t, P)))
    out = tmp_path / "opt"
    rc = main(["optimize-peak", "--network", str(net), "--demand", str(dem), "--budget", "4", "--out", str(out), "--dt", "600"])
    assert rc == 0
    for name in ("injection_profile.csv", "feed_in.csv", "feed_in.gp", "report.txt"):
        assert (out / name).exists()
    assert "peak reduction" in (out / "report.txt").read_text()


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "dhnet.cli", "gen-network", "--kind", "path"], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["arcs"]
