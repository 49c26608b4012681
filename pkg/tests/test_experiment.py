import json
import os
import tempfile
import unittest

import numpy as np
import pytest

import qstab


def tiny_experiment(output_dir, **changes):
    """A bell2q experiment small enough to train and evaluate in seconds."""
    document = dict(
        name="tiny",
        system="bell2q",
        reward=dict(variant="PNR"),
        train=dict(
            total_steps=200, n_steps=100, batch_size=50, n_epochs=2, hidden_sizes=[8, 8]
        ),
        episode=dict(max_time=0.05, initial_state_mode="fixed:mixed"),
        eval=dict(n_initial_states=1, n_noise_realizations=2, t_max=0.02),
        output_dir=output_dir,
        seed=3,
    )
    document.update(changes)
    return document


class TestExperimentConfig(unittest.TestCase):
    def setUp(self):
        self.tempdir = tempfile.TemporaryDirectory()
        self.addCleanup(self.tempdir.cleanup)
        self.path = os.path.join(self.tempdir.name, "experiment.json")

    def write(self, text):
        with open(self.path, mode="w") as f:
            f.write(text)

    def test_defaults(self):
        config = qstab.ExperimentConfig()
        assert config.catalog_entry().name == "bell2q"
        assert config.reward_spec().variant == "PNR"
        assert config.episode_config().max_time == 20
        assert config.train_config().seed == 0
        assert config.ablation_variants == qstab.VARIANTS

    def test_load(self):
        self.write(json.dumps(tiny_experiment(self.tempdir.name)))
        config = qstab.ExperimentConfig.load(self.path)
        assert config.train_config().total_steps == 200
        assert config.train_config().seed == 3
        assert config.episode_config().n_steps == 50
        assert config.eval_protocol().seed == 3

        overridden = qstab.ExperimentConfig.load(self.path, seed=5)
        assert overridden.train_config().seed == 5

    def test_syntax_error_location(self):
        self.write('{\n  "system": "bell2q",\n  "seed": ,\n}')
        with self.assertRaisesRegex(qstab.InvalidConfiguration, r"experiment.json:3:"):
            qstab.ExperimentConfig.load(self.path)

    def test_value_error_location(self):
        self.write('{\n  "system": "bell2q",\n  "train": {\n    "gamma": 1.5\n  }\n}')
        with self.assertRaisesRegex(qstab.InvalidConfiguration, r"experiment.json:4:.*gamma"):
            qstab.ExperimentConfig.load(self.path)

    def test_not_an_object(self):
        self.write("[1, 2]")
        with self.assertRaisesRegex(qstab.InvalidConfiguration, r"experiment.json:1:"):
            qstab.ExperimentConfig.load(self.path)

    def test_invalid(self):
        for bad in (
            dict(system="w4q"),
            dict(reward=dict(variant="XYZ")),
            dict(imperfections=dict(temperature=3)),
            dict(ablation_variants=["PNR", "XYZ"]),
            dict(controller="random"),
            dict(target="mixed"),
            dict(episode=dict(max_time=0.0105)),
        ):
            with self.assertRaises(qstab.InvalidConfiguration):
                qstab.ExperimentConfig(bad)

    def test_imperfections(self):
        config = qstab.ExperimentConfig(imperfections=dict(eta_c=0.5, delay_steps=5))
        assert config.catalog_entry().system.eta_c == 0.5
        assert config.episode_config().delay_steps == 5
        protocol = config.eval_protocol()
        assert protocol.eta_c == 0.5 and protocol.delay_steps == 5
        assert config.eval_protocol(t_max=1.0, n_initial_states=None).t_max == 1.0

    def test_budget_scale(self):
        config = qstab.ExperimentConfig(train=dict(total_steps=1000))
        assert config.train_config(0.25).total_steps == 250
        assert config.train_config(1e-9).total_steps == 1
        with self.assertRaises(qstab.InvalidConfiguration):
            config.train_config(0)

    def test_reward_variants_share_d(self):
        config = qstab.ExperimentConfig(reward=dict(variant="PNR", d=0.01))
        for variant in qstab.VARIANTS:
            assert config.reward_spec(variant).variant == variant
            assert config.reward_spec(variant).d == 0.01

    def test_inline_system(self):
        spec = qstab.get_system("bell2q").system.replace(name="custom")
        config = qstab.ExperimentConfig(system=spec.to_dict(), target="bell")
        entry = config.catalog_entry()
        assert entry.name == "custom"
        np.testing.assert_allclose(entry.target, qstab.bell_state())
        with self.assertRaises(qstab.InvalidConfiguration):
            qstab.ExperimentConfig(system=spec.to_dict())

    def test_resolved_snapshot(self):
        config = qstab.ExperimentConfig(tiny_experiment(self.tempdir.name))
        snapshot = config.resolved()
        for section in ("reward", "train", "episode", "lyapunov"):
            assert isinstance(snapshot[section], dict)
        assert snapshot["train"]["gamma"] == qstab.TrainConfig().gamma
        assert snapshot["reward"]["e"] == 2
        assert "eta_c" not in snapshot["eval"]
        # The snapshot loads back into the same experiment
        assert qstab.ExperimentConfig(snapshot).resolved() == snapshot

        config.save(self.path)
        assert qstab.ExperimentConfig.load(self.path).resolved() == snapshot


def test_create_run_dir():
    with tempfile.TemporaryDirectory() as tempdir:
        first = qstab.create_run_dir(tempdir, "exp", dict(a=1))
        second = qstab.create_run_dir(tempdir, "exp", dict(a=1))
        assert first != second
        for path in (first, second):
            assert os.path.isdir(os.path.join(path, "reports"))
            with open(os.path.join(path, "VERSION")) as f:
                assert f.read().strip() == qstab.__version__
        assert os.path.basename(first).startswith("exp_")


def test_build_controller():
    entry = qstab.get_system("bell2q")
    zero = qstab.build_controller("zero", entry.system, entry.target)
    np.testing.assert_array_equal(zero(np.eye(4) / 4), [0, 0])
    lyapunov = qstab.build_controller(
        "lyapunov", entry.system, entry.target, lyapunov_config=qstab.LyapunovConfig()
    )
    assert lyapunov(entry.target).shape == (2,)
    with pytest.raises(qstab.InvalidConfiguration):
        qstab.build_controller("policy", entry.system, entry.target)
    with pytest.raises(qstab.InvalidConfiguration):
        qstab.build_controller("random", entry.system, entry.target)


class TestRuns(unittest.TestCase):
    def setUp(self):
        self.tempdir = tempfile.TemporaryDirectory()
        self.addCleanup(self.tempdir.cleanup)
        self.config = qstab.ExperimentConfig(tiny_experiment(self.tempdir.name))

    def test_run_training(self):
        result = qstab.run_training(self.config, progress_bar=False)
        assert os.path.dirname(result.run_dir) == self.tempdir.name
        for fn in ("config.json", "VERSION", "checkpoint.zst", "train_log.jsonl"):
            assert os.path.exists(os.path.join(result.run_dir, fn)), fn
        assert len(result.training_log) == 2
        assert list(result.training_log.columns) == list(qstab.TRAINING_LOG_COLUMNS)
        assert len(qstab.read_jsonl(os.path.join(result.run_dir, "train_log.jsonl"))) == 2

        policy, value_net, document = qstab.load_agent(result.checkpoint)
        assert policy.observation_size == 32 and policy.action_size == 2
        assert document["system"]["name"] == "bell2q"
        assert document["reward"]["variant"] == "PNR"
        assert document["experiment"] == self.config.resolved()

    def test_budget_scale(self):
        result = qstab.run_training(self.config, budget_scale=0.5, progress_bar=False)
        assert len(result.training_log) == 1

    def test_same_seed_same_agent(self):
        a = qstab.run_training(self.config, progress_bar=False)
        b = qstab.run_training(self.config, progress_bar=False)
        policy_a, _, _ = qstab.load_agent(a.checkpoint)
        policy_b, _, _ = qstab.load_agent(b.checkpoint)
        for wa, wb in zip(policy_a.mean_net.weights, policy_b.mean_net.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_run_ablation(self):
        config = self.config.replace(ablation_variants=["PNR", "NPLPR"])
        run_dir, table = qstab.run_ablation(config, progress_bar=False)
        assert list(table["variant"]) == ["PNR", "NPLPR"]
        assert (table["error"] == "").all()
        assert np.all((table["success rate"] >= 0) & (table["success rate"] <= 1))
        assert os.path.exists(os.path.join(run_dir, "ablation.csv"))
        for variant in ("PNR", "NPLPR"):
            assert os.path.exists(os.path.join(run_dir, f"{variant}_checkpoint.zst"))
        reports = os.listdir(os.path.join(run_dir, "reports"))
        assert any(fn.startswith("PNR_") and fn.endswith("_summary.json") for fn in reports)


CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


@pytest.mark.parametrize("fn", sorted(os.listdir(CONFIG_DIR)))
def test_shipped_configs_load(fn):
    config = qstab.ExperimentConfig.load(os.path.join(CONFIG_DIR, fn))
    assert config.train_config().total_steps > 0
    assert config.episode_config().dt == config.catalog_entry().system.dt


def load_shipped(name):
    return qstab.ExperimentConfig.load(os.path.join(CONFIG_DIR, name + ".json"))


@pytest.mark.parametrize("fn", sorted(os.listdir(CONFIG_DIR)))
def test_shipped_architecture(fn):
    train_config = qstab.ExperimentConfig.load(os.path.join(CONFIG_DIR, fn)).train_config()
    assert train_config.hidden_sizes == (128, 128)
    assert train_config.lr_schedule == "linear"


@pytest.mark.parametrize("name", ["bell2q_desk", "bell2q_ablation_desk"])
def test_desk_configs(name):
    config = load_shipped(name)
    train_config = config.train_config()
    assert train_config.total_steps == 500_000
    assert train_config.learning_rate == 1e-4
    assert config.episode_config().max_time == 20
    assert config.episode_config().dt == 0.001
    protocol = config.eval_protocol()
    assert (protocol.n_initial_states, protocol.n_noise_realizations) == (20, 20)
    assert protocol.t_max == 20
    # Quick runs scale the budget instead of shipping another config
    assert config.train_config(budget_scale=0.1).total_steps == 50_000


@pytest.mark.parametrize(
    "name, eta_c, delay_steps",
    [
        ("ghz3q_robustness_eta", 0.8, 0),
        ("ghz3q_robustness_delay", None, 50),
        ("bell2q_robustness_eval", 0.8, 50),
    ],
)
def test_robustness_configs_train_perfect(name, eta_c, delay_steps):
    config = load_shipped(name)
    # Trained under perfect measurement without delay
    assert config.catalog_entry().system.eta_c == 1
    assert config.episode_config().delay_steps == 0
    assert config.train_config().learning_rate == 5e-7
    # Imperfections only enter at evaluation
    protocol = config.eval_protocol()
    assert protocol.eta_c == eta_c
    assert protocol.delay_steps == delay_steps


def test_imperfect_training_config():
    config = load_shipped("bell2q_trained_imperfect")
    assert config.catalog_entry().system.eta_c == 0.8
    assert config.episode_config().delay_steps == 50
    assert config.eval_protocol().eta_c == 0.8
