import json

import numpy as np
import pytest

from knf.cli import main
from knf.harness import ExperimentRecord, ExperimentSpec

from conftest import band_field


@pytest.fixture(scope="module")
def wave_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "wave.json"
    assert main(["cnoidal", "--a", "8", "--c", "0", "--tol", "1e-12", "--out", str(path)]) == 0
    return path


class TestCli:
    def test_cnoidal_writes_wave(self, wave_file, capsys):
        data = json.loads(wave_file.read_text())
        assert data["a"] == 8.0 and data["residual"] < 1e-8

    def test_evolve_and_verify(self, wave_file, tmp_path, capsys):
        g = band_field(16, 4, 8, np.random.default_rng(0))
        init = tmp_path / "g.json"
        init.write_text(json.dumps(g.to_json()))
        out = tmp_path / "traj"
        rc = main(["evolve", "--wave", str(wave_file), "--init", str(init), "--N", "16",
                   "--dt", "2.5e-5", "--T", "2e-3", "--monitor-every", "1", "--out", str(out)])
        assert rc == 0
        assert (out / "index.json").exists() and (out / "conservation.csv").exists()
        capsys.readouterr()
        rc = main(["nf", "verify", "--traj", str(out), "--out", str(tmp_path / "rep")])
        report = json.loads(capsys.readouterr().out)
        assert rc == 0 and abs(report["order"] - 2) < 0.1
        assert (tmp_path / "rep" / "identity.csv").exists()

    def test_evolve_needs_input(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["evolve", "--N", "16", "--out", str(tmp_path / "x")])

    def test_bounds(self, wave_file, tmp_path, capsys):
        rc = main(["nf", "bounds", "--s", "0.25", "--trials", "6", "--N", "12", "--wave", str(wave_file),
                   "--out", str(tmp_path / "b")])
        assert rc == 0 and json.loads(capsys.readouterr().out)["passed"]
        assert (tmp_path / "b" / "bounds.csv").read_text().startswith("quantity,max_ratio,violations")

    def test_fredholm(self, wave_file, capsys):
        assert main(["nf", "fredholm", "--s", "0.25", "--N", "16", "--wave", str(wave_file)]) == 0
        assert json.loads(capsys.readouterr().out)["sigma_min"]["16"] > 0

    def test_run(self, tmp_path, capsys):
        spec = tmp_path / "cell.json"
        spec.write_text(json.dumps(ExperimentSpec(N=64, N0=8, T=0.1, samples=5).to_json()))
        assert main(["run", "--spec", str(spec), "--out", str(tmp_path / "cell")]) == 0
        assert ExperimentRecord.load(tmp_path / "cell").err_L[0] == 0

    def test_suite(self, tmp_path, capsys):
        cfg = tmp_path / "s.ini"
        cfg.write_text("[suite]\nN0 = 8\nseed = 0\nT = 0.1\n[solver]\nN = 64\nsamples = 5\n")
        rc = main(["suite", "--config", str(cfg), "--out", str(tmp_path / "o"), "--jobs", "1"])
        assert rc == 0 and "verdict: PASS" in capsys.readouterr().out
        assert (tmp_path / "o" / "verdict.json").exists()

    def test_suite_failure_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "s.ini"
        cfg.write_text("[suite]\nN0 = 8\nseed = 0\nT = 0.1\n[solver]\nN = 64\nsamples = 5\n"
                       "[acceptance]\nzero_tol = -1\n")
        assert main(["suite", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
