import json
import os

import numpy as np
import pytest

import sphrelax.simulation as simulation
from sphrelax.cli import ConfigError, main, parse_config, read_config_file
from sphrelax.damping import NONE, PAIRWISE_SPLIT, PARTICLE_SPLIT


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestParse:
    def test_flag_example(self):
        cfg = parse_config(argv=["--case", "bending_cantilever", "--resolution", "6",
                                 "--damping", "particle", "--alpha", "0.2", "--seed", "42"])
        d = cfg.spec.damping
        assert cfg.spec.resolution == 6
        assert d.scheme == PARTICLE_SPLIT and d.alpha == 0.2 and d.seed == 42

    @pytest.mark.parametrize("alpha", ["0", "-0.1", "1.5", "nan"])
    def test_bad_alpha(self, alpha):
        with pytest.raises(ConfigError, match="alpha"):
            parse_config(argv=["--case", "falling_ball", "--alpha", alpha])

    def test_flags_override_file(self, tmp_path):
        path = write(tmp_path, "[run]\ncase = falling_ball\n[damping]\nscheme = pairwise\nalpha = 0.5\n")
        cfg = parse_config(argv=["--config", path, "--alpha", "0.25"])
        assert cfg.spec.damping.scheme == PAIRWISE_SPLIT
        assert cfg.spec.damping.alpha == 0.25
        assert parse_config(path).spec.damping.alpha == 0.5

    def test_unknown_key_reports_line(self, tmp_path):
        path = write(tmp_path, "[run]\ncase = falling_ball\n\n[damping]\nalpha = 0.3\nbogus = 1\n")
        with pytest.raises(ConfigError, match=r"run\.ini:6.*bogus"):
            read_config_file(path)

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown section"):
            read_config_file(write(tmp_path, "[solver]\nx = 1\n"))

    def test_malformed_value(self, tmp_path):
        path = write(tmp_path, "[run]\ncase = falling_ball\nresolution = six\n")
        with pytest.raises(ConfigError, match=r":3.*resolution"):
            read_config_file(path)

    def test_missing_case(self):
        with pytest.raises(ConfigError, match="missing case"):
            parse_config(argv=["--alpha", "0.5"])

    def test_unknown_scheme(self):
        with pytest.raises(ConfigError, match="scheme"):
            parse_config(argv=["--case", "falling_ball", "--damping", "magic"])

    def test_beta_and_eta_exclusive(self):
        with pytest.raises(ConfigError):
            parse_config(argv=["--case", "falling_ball", "--beta", "1", "--eta", "5"])

    def test_beta_converts_to_eta(self):
        cfg = parse_config(argv=["--case", "bending_cantilever", "--resolution", "6", "--beta", "0.8"])
        assert cfg.spec.damping.eta == pytest.approx(63.6, abs=0.1)

    def test_inline_comments(self, tmp_path):
        path = write(tmp_path, "[run]\ncase = falling_ball ; the ball\n[damping]\nscheme = off # none\n")
        assert parse_config(path).spec.damping.scheme == NONE

    def test_nonpositive_interval(self):
        with pytest.raises(ConfigError, match="interval"):
            parse_config(argv=["--case", "falling_ball", "--output-interval", "0"])


def test_list_cases(capsys):
    assert main(["list-cases"]) == 0
    assert capsys.readouterr().out.split() == ["bending_cantilever", "falling_ball", "twisting_cantilever"]


def test_config_error_exit_code(capsys):
    assert main(["run", "--case", "falling_ball", "--alpha", "0"]) == 2
    assert "alpha" in capsys.readouterr().err


def test_solver_failure_exit_code(monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise simulation.SolverFailure("inverted element", step=7, particle=3)

    monkeypatch.setattr(simulation, "run", boom)
    assert main(["run", "--case", "falling_ball", "--end-time", "0"]) == 3
    err = capsys.readouterr().err
    assert "step 7" in err and "particle 3" in err


def test_zero_end_time_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--case", "bending_cantilever", "--resolution", "6", "--end-time", "0",
                 "--output-dir", str(out), "--snapshot-interval", "0.005", "--threads", "1"])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["steps"] == 0
    assert json.loads(capsys.readouterr().out) == report
    lines = (out / "probe_S.csv").read_text().splitlines()
    assert lines == ["t,ux,uy,uz", "0,0,0,0"]
    snap = np.loadtxt(out / "snapshot_000000.csv", delimiter=",", skiprows=1)
    assert snap.shape == (648, 8)
    assert np.array_equal(snap[:, 0], np.arange(648))
    assert np.all(snap[:, -1] == 0.0)


def test_outputs_round_trip_and_determinism(tmp_path, capsys):
    args = ["run", "--case", "bending_cantilever", "--resolution", "6", "--end-time", "0.03",
            "--output-interval", "0.005", "--snapshot-interval", "0.01", "--seed", "3", "--threads", "1"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--output-dir", str(a)]) == 0
    assert main(args + ["--output-dir", str(b)]) == 0
    capsys.readouterr()
    for name in sorted(os.listdir(a)):
        if name != "report.json":
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
    data = np.loadtxt(a / "probe_S.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(data[:, 0]) > 0)
    assert data[-1, 0] == pytest.approx(0.03, rel=1e-9)
    assert data[-1, 2] < 0
    snaps = sorted(n for n in os.listdir(a) if n.startswith("snapshot_"))
    assert len(snaps) == 4
    last = np.loadtxt(a / snaps[-1], delimiter=",", skiprows=1)
    assert np.all(last[:, -1] >= 0) and last[:, -1].max() > 0


def test_csv_exact_doubles(tmp_path):
    s = simulation.ProbeSeries(2)
    vals = [(0.0, (0.1, -1 / 3)), (1e-300, (np.pi, 2.0**-1074))]
    for t, u in vals:
        s.append(t, u)
    path = tmp_path / "p.csv"
    simulation.write_probe_csv(s, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(back, np.array([[t, *u] for t, u in vals]))
    with pytest.raises(ValueError):
        simulation.write_probe_csv(simulation.ProbeSeries(2), path)
