import json
import math
from pathlib import Path

import numpy as np
import pytest

from dpobserver.cli import (
    EXIT_INFEASIBLE,
    EXIT_INVALID,
    EXIT_OK,
    EXIT_USAGE,
    main,
)


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def synthesis_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = run([
        "synthesize-gain", "--grid-step", "0.05", "--out", str(out),
    ])
    assert code == EXIT_OK
    return out / "synthesis.json"


class TestCalibrate:
    def test_blockmodel_paper_value(self, tmp_path, capsys):
        code = run([
            "calibrate", "--model", "blockmodel", "--f", "0.95", "--l", "0.3",
            "--K", "1e-3", "--alpha", "0.25", "--eps", "1", "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "calibration.json").read_text())
        assert payload["calibration"]["b"] == pytest.approx(6.23e-3, rel=1e-2)
        assert payload["certificate"]["valid"]
        echoed = capsys.readouterr().out
        assert "resolved config" in echoed
        assert "b=" in echoed

    def test_identity_unit(self, tmp_path):
        code = run([
            "calibrate", "--identity", "--K", "1", "--alpha", "0", "--p", "1",
            "--eps", "1", "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "calibration.json").read_text())
        assert payload["calibration"]["b"] == pytest.approx(1.0)

    def test_sir_from_synthesis(self, tmp_path, synthesis_file):
        code = run([
            "calibrate", "--model", "sir", "--eps", "2", "--delta", "0.05",
            "--synthesis", str(synthesis_file), "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "calibration.json").read_text())
        assert payload["calibration"]["kind"] == "gaussian"
        cov = np.array(payload["covariance"])
        assert cov.shape == (2, 2)

    def test_config_file_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"model": "blockmodel", "eps": 2.0}))
        code = run(["calibrate", "--config", str(cfg), "--out", str(tmp_path)])
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "calibration.json").read_text())
        assert payload["config"]["eps"] == 2.0
        # CLI flag overrides the file
        code = run([
            "calibrate", "--config", str(cfg), "--eps", "4", "--out", str(tmp_path),
        ])
        payload = json.loads((tmp_path / "calibration.json").read_text())
        assert payload["config"]["eps"] == 4.0

    def test_missing_target_is_usage_error(self, tmp_path):
        assert run(["calibrate", "--out", str(tmp_path)]) == EXIT_USAGE


class TestVerify:
    def test_blockmodel_valid(self, tmp_path):
        code = run([
            "verify-contraction", "--model", "blockmodel", "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "certificate.json").read_text())
        assert payload["certificate"]["valid"]
        assert abs(payload["certificate"]["margin"]) < 1e-9

    def test_gain_outside_window_invalid_exit_1(self, tmp_path):
        code = run([
            "verify-contraction", "--model", "blockmodel", "--l", "5",
            "--rate", "0.2", "--out", str(tmp_path),
        ])
        assert code == EXIT_INVALID
        payload = json.loads((tmp_path / "certificate.json").read_text())
        assert not payload["certificate"]["valid"]
        assert "witness" in payload["certificate"]

    def test_grid_refinement_flag(self, tmp_path):
        code = run([
            "verify-contraction", "--model", "blockmodel", "--grid-step", "0.005",
            "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "certificate.json").read_text())
        assert payload["certificate"]["grid_step"] == 0.005

    def test_sir_closed_loop(self, tmp_path, synthesis_file):
        code = run([
            "verify-contraction", "--model", "sir", "--synthesis",
            str(synthesis_file), "--grid-step", "0.05", "--out", str(tmp_path),
        ])
        assert code == EXIT_OK


class TestSynthesize:
    def test_writes_result_and_reverification(self, synthesis_file):
        payload = json.loads(synthesis_file.read_text())
        assert payload["synthesis"]["converged"]
        assert payload["reverification"]["valid"]
        assert payload["synthesis"]["min_margin"] >= -1e-9

    def test_infeasible_exit_2(self, tmp_path):
        code = run([
            "synthesize-gain", "--beta", "1e-9", "--grid-step", "0.25",
            "--out", str(tmp_path),
        ])
        assert code == EXIT_INFEASIBLE

    def test_objective_weight_tradeoff(self, tmp_path):
        assert run([
            "synthesize-gain", "--grid-step", "0.1", "--c", "10",
            "--out", str(tmp_path),
        ]) == EXIT_OK
        heavy = json.loads((tmp_path / "synthesis.json").read_text())
        assert run([
            "synthesize-gain", "--grid-step", "0.1", "--c", "0.1",
            "--out", str(tmp_path),
        ]) == EXIT_OK
        light = json.loads((tmp_path / "synthesis.json").read_text())
        assert heavy["synthesis"]["g2"] < light["synthesis"]["g2"]


class TestSimulate:
    def test_blockmodel_byte_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code = run([
                "simulate", "blockmodel", "--seed", "7", "--n-steps", "200",
                "--out", str(out),
            ])
            assert code == EXIT_OK
        csv_a = (a / "blockmodel_trajectory.csv").read_bytes()
        csv_b = (b / "blockmodel_trajectory.csv").read_bytes()
        assert csv_a == csv_b
        meta_a = (a / "blockmodel_metadata.json").read_bytes()
        meta_b = (b / "blockmodel_metadata.json").read_bytes()
        assert meta_a == meta_b

    def test_blockmodel_adjacent_emits_gap_and_bound(self, tmp_path):
        code = run([
            "simulate", "blockmodel", "--seed", "3", "--n-steps", "300",
            "--adjacent", "--k0", "100", "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        lines = (tmp_path / "blockmodel_trajectory.csv").read_text().splitlines()
        header = lines[0].split(",")
        assert header[-2:] == ["gap", "bound"]
        gi, bi = header.index("gap"), header.index("bound")
        for row in lines[1:]:
            vals = [float(v) for v in row.split(",")]
            assert vals[gi] <= vals[bi] + 1e-9

    def test_sir_no_noise_converges(self, tmp_path, synthesis_file):
        code = run([
            "simulate", "sir", "--seed", "5", "--n-steps", "200", "--no-noise",
            "--synthesis", str(synthesis_file), "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        lines = (tmp_path / "sir_trajectory.csv").read_text().splitlines()
        header = lines[0].split(",")
        first = [float(v) for v in lines[1].split(",")]
        last = [float(v) for v in lines[-1].split(",")]
        ix2, iz2 = header.index("x_2"), header.index("z_2")
        assert abs(last[iz2] - last[ix2]) < abs(first[iz2] - first[ix2])

    def test_sir_deterministic(self, tmp_path, synthesis_file):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code = run([
                "simulate", "sir", "--seed", "11", "--n-steps", "150",
                "--synthesis", str(synthesis_file), "--out", str(out),
            ])
            assert code == EXIT_OK
        assert (a / "sir_trajectory.csv").read_bytes() == (b / "sir_trajectory.csv").read_bytes()
        assert (a / "sir_metadata.json").read_bytes() == (b / "sir_metadata.json").read_bytes()

    def test_metadata_embeds_resolved_config(self, tmp_path):
        run([
            "simulate", "blockmodel", "--seed", "1", "--n-steps", "50",
            "--out", str(tmp_path),
        ])
        meta = json.loads((tmp_path / "blockmodel_metadata.json").read_text())
        assert meta["config"]["seed"] == 1
        assert meta["config"]["n_steps"] == 50
        assert meta["config"]["f"] == 0.95


class TestReport:
    def test_renders_figures(self, tmp_path, synthesis_file):
        run([
            "simulate", "sir", "--seed", "2", "--n-steps", "120", "--adjacent",
            "--k0", "40", "--synthesis", str(synthesis_file), "--out", str(tmp_path),
        ])
        code = run([
            "report", "--csv", str(tmp_path / "sir_trajectory.csv"),
            "--meta", str(tmp_path / "sir_metadata.json"), "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        assert (tmp_path / "sir_trajectory_estimate.png").exists()
        assert (tmp_path / "sir_trajectory_gap.png").exists()

    def test_simulate_with_plot_flag(self, tmp_path):
        code = run([
            "simulate", "blockmodel", "--seed", "4", "--n-steps", "80",
            "--plot", "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        assert (tmp_path / "blockmodel_trajectory_estimate.png").exists()

    def test_meta_autodiscovery(self, tmp_path):
        run([
            "simulate", "blockmodel", "--seed", "4", "--n-steps", "60",
            "--out", str(tmp_path),
        ])
        code = run([
            "report", "--csv", str(tmp_path / "blockmodel_trajectory.csv"),
            "--out", str(tmp_path),
        ])
        assert code == EXIT_OK


class TestUsage:
    def test_unknown_command_exits_64(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == EXIT_USAGE

    def test_bad_flag_value(self, tmp_path):
        code = run([
            "calibrate", "--model", "blockmodel", "--l", "-3", "--out", str(tmp_path),
        ])
        assert code == EXIT_USAGE


class TestOutputEnvVar:
    def test_default_output_dir_from_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DPOBSERVER_OUT", str(tmp_path))
        code = run(["calibrate", "--model", "blockmodel"])
        assert code == EXIT_OK
        assert (tmp_path / "calibration.json").exists()
