import json
import os
import tempfile
import unittest

from click.testing import CliRunner

import qstab
from qstab.cli import main
from tests.test_experiment import tiny_experiment


def _json_output(result):
    assert result.exit_code == 0, result.output
    return json.loads(result.output)


def test_version():
    result = CliRunner().invoke(main, ["--version"])
    assert result.exit_code == 0
    assert qstab.__version__ in result.output


def test_dump_system():
    document = _json_output(CliRunner().invoke(main, ["dump-system", "ghz3q", "--eta", "0.5"]))
    assert document["name"] == "ghz3q"
    assert document["max_time"] == 40
    assert document["system"]["eta_c"] == 0.5
    assert len(document["target"]["real"]) == 8


def test_unknown_system():
    result = CliRunner().invoke(main, ["dump-system", "w4q"])
    assert result.exit_code == 1
    assert "Unknown system" in result.output


class TestCommands(unittest.TestCase):
    def setUp(self):
        self.tempdir = tempfile.TemporaryDirectory()
        self.addCleanup(self.tempdir.cleanup)
        self.runner = CliRunner()
        self.config_path = os.path.join(self.tempdir.name, "tiny.json")
        with open(self.config_path, mode="w") as f:
            json.dump(tiny_experiment(os.path.join(self.tempdir.name, "runs")), f)
        self.reports = os.path.join(self.tempdir.name, "reports")

    def invoke(self, *args):
        return self.runner.invoke(main, list(args))

    def test_eval_baselines(self):
        for controller in ("lyapunov", "zero"):
            summary = _json_output(
                self.invoke(
                    "eval", "--controller", controller, "--n-initial", "1", "--n-noise", "2",
                    "--t-max", "0.01", "--output", self.reports, "--no-progress",
                )
            )
            assert summary["n_trajectories"] == 2
            assert 0 <= summary["success_rate"] <= 1
            assert summary["tags"] == []
            for path in summary["files"].values():
                assert os.path.exists(path)
            assert os.path.basename(summary["files"]["summary"]).startswith(controller)

    def test_eval_imperfections(self):
        summary = _json_output(
            self.invoke(
                "eval", "--controller", "lyapunov", "--system", "ghz3q", "--eta", "0.5",
                "--delay", "5", "--n-initial", "1", "--n-noise", "1", "--t-max", "0.01",
                "--init", "fixed:rho01", "--output", self.reports, "--no-progress",
            )
        )
        assert summary["tags"] == ["eta=0.5", "delay=0.005"]
        assert summary["metadata"]["system"] == "ghz3q"

    def test_eval_bad_option(self):
        result = self.invoke(
            "eval", "--controller", "zero", "--n-initial", "0", "--output", self.reports
        )
        assert result.exit_code == 1
        result = self.invoke("eval", "--controller", "policy", "--output", self.reports)
        assert result.exit_code == 1

    def test_missing_config(self):
        result = self.invoke("train", "--config", os.path.join(self.tempdir.name, "nope.json"))
        assert result.exit_code == 1

    def test_bad_config(self):
        with open(self.config_path, mode="w") as f:
            f.write('{\n  "train": {"gamma": 2.0}\n}')
        result = self.invoke("train", "--config", self.config_path)
        assert result.exit_code == 1
        assert "tiny.json:2:" in result.output

    def test_junk_checkpoint(self):
        path = os.path.join(self.tempdir.name, "junk.zst")
        with open(path, mode="wb") as f:
            f.write(b"definitely not a checkpoint")
        assert self.invoke("inspect-checkpoint", path).exit_code == 3
        assert self.invoke("eval", "--checkpoint", path).exit_code == 3

    def test_train_inspect_eval(self):
        trained = _json_output(
            self.invoke("train", "--config", self.config_path, "--seed", "4", "--no-progress")
        )
        checkpoint = trained["checkpoint"]
        assert os.path.exists(checkpoint)
        assert trained["last_iteration"]["timesteps"] == 200

        info = _json_output(self.invoke("inspect-checkpoint", checkpoint))
        assert info["observation_size"] == 32
        assert info["action_size"] == 2
        assert info["layer_sizes"] == [32, 8, 8, 2]
        assert info["has_value_net"]
        assert info["system"] == "bell2q"
        assert info["train"]["seed"] == 4
        assert not info["diagnostic"]

        summary = _json_output(self.invoke("eval", "--checkpoint", checkpoint, "--no-progress"))
        assert summary["metadata"]["controller"] == "policy"
        assert summary["n_trajectories"] == 2
        reports = os.path.join(os.path.dirname(checkpoint), "reports")
        assert os.path.dirname(summary["files"]["summary"]) == reports

        # A checkpoint trained on bell2q does not fit ghz3q
        result = self.invoke(
            "eval", "--checkpoint", checkpoint, "--system", "ghz3q", "--no-progress"
        )
        assert result.exit_code == 3

    def test_ablate(self):
        with open(self.config_path, mode="w") as f:
            json.dump(
                tiny_experiment(
                    os.path.join(self.tempdir.name, "runs"), ablation_variants=["PNR", "FPR"]
                ),
                f,
            )
        result = self.invoke("ablate", "--config", self.config_path, "--no-progress")
        assert result.exit_code == 0, result.output
        assert "PNR" in result.output and "FPR" in result.output
        assert "ablation.csv" in result.output
