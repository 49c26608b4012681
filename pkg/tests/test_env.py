import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings

import qstab
from qstab.testutils import density_matrices, seeds


def make_env(name="bell2q", reward_spec=None, **episode):
    entry = qstab.get_system(name)
    config = qstab.EpisodeConfig(dt=entry.system.dt, **episode)
    return qstab.QuantumFeedbackEnv(entry.system, entry.target, reward_spec, config)


def test_encode():
    np.testing.assert_array_equal(qstab.encode(np.eye(2) / 2), [0.5, 0, 0, 0.5, 0, 0, 0, 0])
    rho = np.array([[0.5, 0.5j], [-0.5j, 0.5]])
    np.testing.assert_array_equal(qstab.encode(rho), [0.5, 0, 0, 0.5, 0, 0.5, -0.5, 0])
    with pytest.raises(qstab.DimensionMismatch):
        qstab.decode(np.zeros(7))


@settings(deadline=None)
@given(density_matrices())
def test_decode_inverts_encode(rho):
    obs = qstab.encode(rho)
    assert obs.shape == (2 * len(rho) ** 2,)
    np.testing.assert_array_equal(qstab.decode(obs), rho)


@settings(deadline=None)
@given(seeds)
def test_initial_state_samplers(seed):
    rho = qstab.sample_haar_pure(8, seed)
    assert qstab.purity(rho) == pytest.approx(1)
    assert qstab.is_density_matrix(rho)

    rho = qstab.sample_random_diagonal(4, seed)
    assert qstab.is_density_matrix(rho)
    np.testing.assert_array_equal(rho, np.diag(np.diag(rho)))

    np.testing.assert_array_equal(
        qstab.sample_initial_state("fixed:rho01", 8, seed), qstab.basis_state(8, 1)
    )


@pytest.mark.parametrize("name", qstab.list_systems())
def test_haar_overlap_moment(name):
    entry = qstab.get_system(name)
    dim = entry.system.dim
    rng = np.random.default_rng(17)
    n = 20_000
    overlaps = np.array([
        np.trace(entry.target @ qstab.sample_haar_pure(dim, rng)).real for _ in range(n)
    ])
    # Overlap with a fixed pure state is Beta(1, dim - 1)
    standard_error = np.sqrt((dim - 1) / (dim**2 * (dim + 1)) / n)
    assert abs(overlaps.mean() - 1 / dim) < 5 * standard_error


def test_episode_config_checks():
    assert qstab.EpisodeConfig(max_time=0.01).n_steps == 10
    with pytest.raises(qstab.InvalidConfiguration):
        qstab.EpisodeConfig(max_time=0.0105)
    with pytest.raises(qstab.InvalidConfiguration):
        qstab.EpisodeConfig(initial_state_mode="thermal")
    with pytest.raises(qstab.InvalidConfiguration):
        qstab.EpisodeConfig(delay_steps=-1)
    with pytest.raises(qstab.InvalidConfiguration):
        entry = qstab.get_system("bell2q")
        qstab.QuantumFeedbackEnv(
            entry.system, entry.target, config=qstab.EpisodeConfig(dt=0.002)
        )


def test_timeout():
    env = make_env(max_time=0.01)
    obs = env.reset(seed=1, initial_state=qstab.maximally_mixed(4))
    np.testing.assert_array_equal(obs, qstab.encode(qstab.maximally_mixed(4)))
    for i in range(1, 11):
        transition = env.step([0.0, 0.0])
        assert transition.step_index == i
        assert transition.done == (i == 10)
    assert transition.termination_reason == "timeout"
    assert env.done
    with pytest.raises(qstab.EpisodeFinished):
        env.step([0.0, 0.0])


def test_success_after_window():
    env = make_env("ghz3q")
    entry = qstab.get_system("ghz3q")
    env.reset(seed=5, initial_state=entry.target)
    for i in range(1, 11):
        transition = env.step([0.0, 0.0])
        assert transition.distance <= 1e-3
        assert transition.done == (i == 10)
    assert transition.termination_reason == "success"
    assert env.time == pytest.approx(0.01)


def test_rewards_follow_spec():
    spec = qstab.RewardSpec("PNR")
    env = make_env(reward_spec=spec)
    env.reset(seed=2)
    for _ in range(5):
        transition = env.step([0.5, -0.5])
        assert transition.reward == qstab.evaluate(spec, transition.distance, transition.step_index)
        assert transition.distance == pytest.approx(env.distance())


def test_delayed_observations():
    env = make_env(delay_steps=50)
    obs0 = env.reset(seed=3, initial_state=qstab.maximally_mixed(4))
    for _ in range(50):
        transition = env.step([1.0, 1.0])
        np.testing.assert_array_equal(transition.obs, obs0)
        np.testing.assert_array_equal(transition.next_obs, obs0)
    assert not np.array_equal(qstab.encode(env.state), obs0)
    transition = env.step([1.0, 1.0])
    np.testing.assert_array_equal(transition.obs, obs0)
    assert not np.array_equal(transition.next_obs, obs0)


def test_same_seed_same_episode():
    def run(seed):
        env = make_env()
        env.reset(seed=seed)
        return np.array([env.step([0.2, -0.4]).distance for _ in range(30)])

    np.testing.assert_array_equal(run(10), run(10))
    assert not np.array_equal(run(10), run(11))


def test_action_is_clamped():
    env = make_env()
    env.reset(seed=0)
    transition = env.step([3.0, -2.0])
    np.testing.assert_array_equal(transition.action, [1.0, -1.0])
    with pytest.raises(qstab.DimensionMismatch):
        env.step([0.0])


def test_target_must_match():
    entry = qstab.get_system("bell2q")
    with pytest.raises(qstab.DimensionMismatch):
        qstab.QuantumFeedbackEnv(entry.system, qstab.ghz_state(3))
    with pytest.raises(qstab.NotPhysical):
        qstab.QuantumFeedbackEnv(entry.system, qstab.maximally_mixed(4))


def test_write_transitions():
    env = make_env(max_time=0.005)
    env.reset(seed=4)
    transitions = [env.step([0.1, 0.1]) for _ in range(5)]
    with tempfile.TemporaryDirectory() as temp_dir:
        path = os.path.join(temp_dir, "transitions.jsonl")
        assert qstab.write_transitions(path, transitions, include_observations=True) == 5
        records = qstab.read_jsonl(path)
    assert [r["step_index"] for r in records] == [1, 2, 3, 4, 5]
    assert records[-1]["termination_reason"] == "timeout"
    assert len(records[0]["obs"]) == 32
    assert records[0]["action"] == pytest.approx([0.1, 0.1])
