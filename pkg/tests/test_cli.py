"""Command-line surface: exit codes, file formats, config round trips.

Everything drives `cli.main` in-process; one subprocess test checks the
`python -m formloc` wiring.
"""

import subprocess
import sys

import numpy as np
import pytest

from formloc import cli
from formloc.sim import scenario_issue1, scenario_issue2, scenario_issue3, scenario_nominal

HEADER = ("t,dist_12,dist_23,dist_13,esterr_12,esterr_23,esterr_13,"
          "centroid_speed,angular_rate")


def _write_config(tmp_path, config, name="config.ini"):
    path = tmp_path / name
    with open(path, "w") as fh:
        cli.config_to_ini(config).write(fh)
    return path


@pytest.mark.parametrize("factory", [scenario_nominal, scenario_issue1,
                                     scenario_issue2, scenario_issue3])
def test_config_ini_round_trip(tmp_path, factory):
    config = factory()
    loaded = cli.config_from_ini(_write_config(tmp_path, config))
    assert loaded.graph == config.graph
    np.testing.assert_array_equal(loaded.distances.values, config.distances.values)
    assert loaded.variant == config.variant
    assert loaded.sharing == config.sharing
    if config.mismatch is None:
        assert loaded.mismatch is None
    else:
        np.testing.assert_array_equal(loaded.mismatch.values, config.mismatch.values)
    assert (loaded.dt, loaded.duration, loaded.seed) == (config.dt, config.duration, config.seed)
    assert loaded.noise == config.noise
    assert loaded.measurement_noise == config.measurement_noise
    assert loaded.offset_bound == config.offset_bound
    assert loaded.initial_var == config.initial_var
    assert loaded.estimator_enabled == config.estimator_enabled
    assert loaded.thresholds == config.thresholds
    if config.initial_positions is None:
        assert loaded.initial_positions is None
    else:
        np.testing.assert_array_equal(loaded.initial_positions, config.initial_positions)
    if config.initial_estimates is None:
        assert loaded.initial_estimates is None
    else:
        assert set(loaded.initial_estimates) == set(config.initial_estimates)
        for key, vec in config.initial_estimates.items():
            np.testing.assert_array_equal(loaded.initial_estimates[key], vec)


def test_run_scenario_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--scenario", "issue2", "--out", str(out)]) == 0
    assert "outcome: translating_drift" in capsys.readouterr().out

    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == HEADER
    assert len(lines) == 1 + 800  # duration 8 at dt 0.01
    # repr round trip: the parsed floats match the written text exactly
    row = lines[1].split(",")
    assert all(cli._fmt(float(x)) == x for x in row)

    manifest = (out / "manifest.txt").read_text()
    assert "[result]" in manifest
    assert "outcome = translating_drift" in manifest
    assert "metrics = metrics.csv" in manifest


def test_manifest_replay_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--scenario", "issue2", "--out", str(a)]) == 0
    assert cli.main(["run", "--config", str(a / "manifest.txt"), "--out", str(b)]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_run_overrides_recorded(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--scenario", "issue3", "--seed", "7", "--dt", "0.02",
                     "--duration", "4.0", "--out", str(out)]) == 0
    manifest = (out / "manifest.txt").read_text()
    assert "seed = 7" in manifest
    assert "dt = 0.02" in manifest
    assert "duration = 4.0" in manifest


def test_run_usage_errors(tmp_path, capsys):
    assert cli.main(["run"]) == 2
    assert cli.main(["run", "--scenario", "issue2",
                     "--config", "x.ini"]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[graph]\nagents = two\nedges = 1-2\n")
    assert cli.main(["run", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "agents" in err


def test_config_errors_carry_location(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text("[graph]\nagents = 3\nedges = 1-2, 2-3, 1-3\n"
                    "[distances]\ndefault = 10.0\n"
                    "[sim]\nseed = 1.5\n")
    with pytest.raises(cli.ConfigError) as exc:
        cli.config_from_ini(path)
    assert f"{path}:7" in str(exc.value)


def test_config_distance_default_and_overrides(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text("[graph]\nagents = 3\nedges = 1-2, 2-3, 1-3\n"
                    "[distances]\ndefault = 9.0\nd_2_3 = 4.0\n")
    config = cli.config_from_ini(path)
    np.testing.assert_array_equal(config.distances.values, [9.0, 4.0, 9.0])
    # mismatch defaults to 1 per edge for the default variant
    np.testing.assert_array_equal(config.mismatch.values, [1.0, 1.0, 1.0])


def test_config_missing_distance_rejected(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text("[graph]\nagents = 3\nedges = 1-2, 2-3, 1-3\n"
                    "[distances]\nd_1_2 = 5.0\n")
    with pytest.raises(cli.ConfigError):
        cli.config_from_ini(path)


def test_run_divergence_exits_runtime(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", "--scenario", "nominal", "--seed", "13",
                     "--duration", "1.0", "--out", str(out)])
    assert code == 1
    assert "diverged" in capsys.readouterr().err


def test_reproduce_checks_outcome(tmp_path, capsys, monkeypatch):
    out = tmp_path / "rep"
    assert cli.main(["reproduce", "issue2", "--out", str(out)]) == 0
    assert "expected translating_drift" in capsys.readouterr().out
    monkeypatch.setitem(cli.EXPECTED_OUTCOME, "issue2", "converged")
    assert cli.main(["reproduce", "issue2", "--out", str(out)]) == 3


def test_reproduce_rejects_unknown_name():
    with pytest.raises(SystemExit) as exc:
        cli.main(["reproduce", "bogus"])
    assert exc.value.code == 2


def test_out_dir_resolution(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUT_DIR, str(tmp_path / "from_env"))
    assert cli.main(["run", "--scenario", "issue2"]) == 0
    assert (tmp_path / "from_env" / "metrics.csv").is_file()

    monkeypatch.delenv(cli.ENV_OUT_DIR)
    monkeypatch.chdir(tmp_path)
    assert cli.main(["run", "--scenario", "issue2"]) == 0
    assert (tmp_path / cli.DEFAULT_OUT_DIR / "metrics.csv").is_file()


def test_check_observability_point(capsys):
    assert cli.main(["check-observability", "--n", "2", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "codistribution rank: 5 of 5" in out
    assert "observable: yes" in out

    assert cli.main(["check-observability", "--n", "2",
                     "--p", "1.0,0.0,0.0,2.0", "--theta", "0.3"]) == 0


def test_check_observability_usage(capsys):
    assert cli.main(["check-observability"]) == 2
    assert cli.main(["check-observability", "--n", "0"]) == 2
    assert cli.main(["check-observability", "--n", "2", "--p", "1.0,2.0"]) == 2
    capsys.readouterr()


def _write_trajectory(path, still_second=True):
    rows = []
    dt = 0.02
    w = 0.7
    for k in range(120):
        t = k * dt
        x1 = 3.0 + 2.0 * np.sin(w * t)
        y1 = 2.0 * (1.0 - np.cos(w * t))
        vx1 = 2.0 * w * np.cos(w * t)
        vy1 = 2.0 * w * np.sin(w * t)
        rows.append([t, 0.0, x1, y1, -1.0, 2.0, 0.0, vx1, vy1, 0.0, 0.0])
    np.savetxt(path, np.array(rows), delimiter=",",
               header="t,theta,x1,y1,x2,y2,w,vx1,vy1,vx2,vy2", comments="")
    return path


def test_check_observability_trajectory(tmp_path, capsys):
    traj = _write_trajectory(tmp_path / "traj.csv")
    assert cli.main(["check-observability", "--trajectory", str(traj)]) == 3
    out = capsys.readouterr().out
    assert "unobservable neighbor blocks: 2" in out
    assert "observable: no" in out


def test_check_observability_trajectory_errors(tmp_path, capsys):
    short = tmp_path / "short.csv"
    short.write_text("t,theta,x\n0.0,0.0,1.0\n0.1,0.0,1.0\n")
    assert cli.main(["check-observability", "--trajectory", str(short)]) == 2

    ragged = tmp_path / "ragged.csv"
    ragged.write_text("t,theta,x1,y1,x2,y2,w,vx1,vy1,vx2,vy2\n"
                      + "0.0,0,1,0,0,1,0,0,0,0,0\n"
                      + "0.1,0,1,0,0,1,0,0,0,0,0\n"
                      + "0.3,0,1,0,0,1,0,0,0,0,0\n")
    assert cli.main(["check-observability", "--trajectory", str(ragged)]) == 2
    assert cli.main(["check-observability", "--trajectory",
                     str(tmp_path / "nope.csv")]) == 2
    capsys.readouterr()


def test_write_metrics_refuses_nonfinite(tmp_path):
    from formloc.sim import run
    series = run(scenario_issue2())
    series.centroid_speed[3] = np.nan
    with pytest.raises(RuntimeError):
        cli.write_metrics_csv(tmp_path / "m.csv", series)


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "formloc", "run", "--scenario", "issue2",
         "--out", str(tmp_path / "m")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "outcome: translating_drift" in proc.stdout
