"""Proximal policy optimization with a diagonal Gaussian policy.

Two separate tanh networks: the policy mean network (with a state-independent log_std vector) and
the value network. Gradients are computed by hand through qstab.mlp_backward.

One training iteration:
    - snapshot the policy (the behaviour policy that collects data),
    - collect a rollout per environment with the snapshot, in parallel,
    - compute advantages with GAE,
    - run n_epochs passes of minibatch updates of the clipped surrogate and the value regression.

"""

import logging
import time
import typing as ty

import numba
import numpy as np
import pandas as pd

import qstab

export, __all__ = qstab.exporter()
__all__.extend(["LOG_STD_MIN", "LOG_STD_MAX"])

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_LOG_2PI = np.log(2 * np.pi)


@export
class TrainingDiverged(RuntimeError):
    pass


@export
class GaussianPolicy:
    """Diagonal Gaussian policy: mean from an MLP, log_std a free vector."""

    __slots__ = ("mean_net", "log_std")

    def __init__(self, mean_net: "qstab.MlpParams", log_std):
        self.mean_net = mean_net
        self.log_std = np.array(log_std, dtype=np.float64).reshape(-1)
        if len(self.log_std) != mean_net.n_outputs:
            raise qstab.DimensionMismatch(
                f"log_std has {len(self.log_std)} entries for {mean_net.n_outputs} actions"
            )

    @property
    def observation_size(self) -> int:
        return self.mean_net.n_inputs

    @property
    def action_size(self) -> int:
        return self.mean_net.n_outputs

    def parameters(self) -> ty.List[np.ndarray]:
        return self.mean_net.parameters() + [self.log_std]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy())

    def all_finite(self) -> bool:
        return self.mean_net.all_finite() and bool(np.all(np.isfinite(self.log_std)))

    def to_dict(self) -> dict:
        return dict(mean_net=self.mean_net.to_dict(), log_std=self.log_std.tolist())

    @classmethod
    def from_dict(cls, d: ty.Mapping) -> "GaussianPolicy":
        return cls(qstab.MlpParams.from_dict(d["mean_net"]), d["log_std"])


@export
class ValueNet:
    """State-value network with a scalar output."""

    __slots__ = ("net",)

    def __init__(self, net: "qstab.MlpParams"):
        if net.n_outputs != 1:
            raise qstab.DimensionMismatch(f"Value network needs one output, has {net.n_outputs}")
        self.net = net

    def parameters(self) -> ty.List[np.ndarray]:
        return self.net.parameters()

    def copy(self) -> "ValueNet":
        return ValueNet(self.net.copy())

    def all_finite(self) -> bool:
        return self.net.all_finite()

    def __call__(self, obs) -> np.ndarray:
        out, _ = qstab.mlp_forward(self.net, obs)
        return out[..., 0]

    def to_dict(self) -> dict:
        return dict(net=self.net.to_dict())

    @classmethod
    def from_dict(cls, d: ty.Mapping) -> "ValueNet":
        return cls(qstab.MlpParams.from_dict(d["net"]))


@export
def make_policy(
    observation_size: int,
    action_size: int,
    hidden_sizes=(128, 128),
    log_std_init=0.0,
    seed=None,
) -> GaussianPolicy:
    net = qstab.init_mlp(
        (observation_size, *hidden_sizes, action_size), seed=seed, output_gain=0.01
    )
    return GaussianPolicy(net, np.full(action_size, float(log_std_init)))


@export
def make_value_net(observation_size: int, hidden_sizes=(128, 128), seed=None) -> ValueNet:
    return ValueNet(qstab.init_mlp((observation_size, *hidden_sizes, 1), seed=seed))


@export
def forward_policy(policy: GaussianPolicy, obs) -> ty.Tuple[np.ndarray, np.ndarray]:
    """Return (mean, clamped log_std) for a single observation or a batch."""
    mean, _ = qstab.mlp_forward(policy.mean_net, obs)
    return mean, np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)


@export
def gaussian_log_prob(mean, log_std, actions) -> np.ndarray:
    """Log-density of a diagonal Gaussian, summed over the action dimensions."""
    z = (np.asarray(actions) - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z**2, axis=-1) - np.sum(log_std) - 0.5 * len(log_std) * _LOG_2PI


@export
def policy_entropy(log_std) -> float:
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    return float(np.sum(log_std + 0.5 * (_LOG_2PI + 1)))


@export
def log_prob_and_sample(
    policy: GaussianPolicy, obs, noise_seed=None, deterministic=False
) -> ty.Tuple[np.ndarray, float]:
    """Sample an action for one observation and return (action, log-probability).

    :param noise_seed: integer seed or numpy Generator for the exploration noise
    :param deterministic: return the mean action (evaluation mode)
    """
    mean, log_std = forward_policy(policy, obs)
    if deterministic:
        action = mean.copy()
    else:
        rng = (
            noise_seed
            if isinstance(noise_seed, np.random.Generator)
            else np.random.default_rng(noise_seed)
        )
        action = mean + np.exp(log_std) * rng.standard_normal(len(log_std))
    return action, float(gaussian_log_prob(mean, log_std, action))


@numba.njit(nogil=True, cache=True)
def _gae(rewards, values, next_values, dones, gamma, lam):
    n = len(rewards)
    advantages = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values[t] * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        advantages[t] = last
    return advantages


@export
def gae(rewards, values, dones, gamma, lam, last_value=0.0) -> ty.Tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and return targets.

    :param rewards: reward of step t
    :param values: V(obs_t)
    :param dones: whether the episode ended at step t; nothing is bootstrapped across it
    :param last_value: V of the observation after the last step, used if that step is not done
    :returns: (advantages, advantages + values)
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not len(rewards) == len(values) == len(dones):
        raise qstab.DimensionMismatch(
            f"Got {len(rewards)} rewards, {len(values)} values and {len(dones)} done flags"
        )
    next_values = np.append(values[1:], float(last_value))
    advantages = _gae(rewards, values, next_values, dones, float(gamma), float(lam))
    return advantages, advantages + values


@export
def normalize_advantages(advantages) -> np.ndarray:
    advantages = np.asarray(advantages, dtype=np.float64)
    if len(advantages) < 2:
        return advantages - advantages.mean() if len(advantages) else advantages
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


@export
def clipped_surrogate(ratio, advantages, clip_range) -> np.ndarray:
    """Per-sample objective min(ratio A, clip(ratio, 1 - c, 1 + c) A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    return np.minimum(
        ratio * advantages, np.clip(ratio, 1 - clip_range, 1 + clip_range) * advantages
    )


@export
def linear_schedule(lr_start: float, step: int, total_steps: int) -> float:
    """lr_start (1 - step / total_steps), never below zero."""
    return lr_start * max(0.0, 1.0 - step / total_steps)


@export
class MiniBatch(ty.NamedTuple):
    obs: np.ndarray
    actions: np.ndarray
    old_logps: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


@export
class LossResult(ty.NamedTuple):
    loss: float
    # Same order as GaussianPolicy.parameters()
    policy_grads: ty.List[np.ndarray]
    # None if no value network was passed
    value_grads: ty.Optional[ty.List[np.ndarray]]
    info: dict


@export
def ppo_loss(
    policy: GaussianPolicy,
    old_logps,
    batch: MiniBatch,
    clip_range: float,
    ent_coef=0.0,
    value_net: ty.Optional[ValueNet] = None,
    vf_coef=0.5,
) -> LossResult:
    """Clipped surrogate loss (plus value and entropy terms) and its gradients.

    Advantages in the batch are used as given; normalize them beforehand. Samples with a
    non-finite probability ratio are left out and counted in info["n_skipped"].

    """
    old_logps = np.asarray(old_logps, dtype=np.float64)
    advantages = np.asarray(batch.advantages, dtype=np.float64)
    actions = np.asarray(batch.actions, dtype=np.float64)
    if actions.ndim == 1:
        actions = actions[:, np.newaxis]

    mean, cache = qstab.mlp_forward(policy.mean_net, batch.obs)
    log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    logps = gaussian_log_prob(mean, log_std, actions)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(logps - old_logps)
    valid = np.isfinite(ratio) & np.isfinite(advantages)
    n_valid = int(valid.sum())
    n_skipped = len(ratio) - n_valid

    entropy = policy_entropy(policy.log_std)
    if n_valid:
        r, adv = ratio[valid], advantages[valid]
        objective = clipped_surrogate(r, adv, clip_range)
        policy_loss = -float(objective.mean())
        # The unclipped branch carries the gradient, the clipped one is flat
        unclipped = r * adv <= np.clip(r, 1 - clip_range, 1 + clip_range) * adv
        grad_logp = np.zeros(len(ratio))
        grad_logp[valid] = -np.where(unclipped, r * adv, 0.0) / n_valid
        clip_fraction = float(np.mean(np.abs(r - 1) > clip_range))
        log_r = (logps - old_logps)[valid]
        approx_kl = float(np.mean((r - 1) - log_r))
    else:
        policy_loss = 0.0
        grad_logp = np.zeros(len(ratio))
        clip_fraction = approx_kl = float("nan")

    inv_var = np.exp(-2 * log_std)
    diff = actions - mean
    grad_mean = grad_logp[:, np.newaxis] * diff * inv_var
    grad_log_std = np.sum(grad_logp[:, np.newaxis] * (diff**2 * inv_var - 1), axis=0) - ent_coef
    # No gradient flows through the clamp
    grad_log_std[(policy.log_std < LOG_STD_MIN) | (policy.log_std > LOG_STD_MAX)] = 0.0

    policy_grads = qstab.mlp_backward(policy.mean_net, cache, grad_mean).parameters()
    policy_grads.append(grad_log_std)

    loss = policy_loss - ent_coef * entropy
    value_grads = None
    value_loss = float("nan")
    if value_net is not None:
        value_loss, value_grads = value_loss_and_grad(value_net, batch.obs, batch.returns)
        loss += vf_coef * value_loss
        value_grads = [vf_coef * g for g in value_grads]

    info = dict(
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        clip_fraction=clip_fraction,
        approx_kl=approx_kl,
        n_skipped=n_skipped,
    )
    return LossResult(loss=loss, policy_grads=policy_grads, value_grads=value_grads, info=info)


@export
def value_loss_and_grad(value_net: ValueNet, obs, targets) -> ty.Tuple[float, ty.List[np.ndarray]]:
    """Mean squared error of V(obs) against targets, and its gradient."""
    targets = np.asarray(targets, dtype=np.float64)
    out, cache = qstab.mlp_forward(value_net.net, obs)
    residual = out[:, 0] - targets
    loss = float(np.mean(residual**2))
    grad_out = (2.0 / len(targets)) * residual[:, np.newaxis]
    return loss, qstab.mlp_backward(value_net.net, cache, grad_out).parameters()


@export
def td_value_update(
    value_net: ValueNet,
    obs,
    targets,
    optimizer: "qstab.Adam",
    max_grad_norm=None,
    learning_rate=None,
    coef=1.0,
) -> float:
    """One optimizer step of V(obs) towards the TD return targets. Returns the loss before it.

    The optimizer must have been built on value_net.parameters(); the network is updated in place.

    """
    loss, grads = value_loss_and_grad(value_net, obs, targets)
    if coef != 1.0:
        grads = [coef * g for g in grads]
    qstab.clip_grad_norm(grads, max_grad_norm)
    optimizer.step(grads, learning_rate)
    return loss


@export
class TrainConfig(qstab.ConfigSection):
    total_steps = qstab.Config(
        type=int, default=10_000_000, help="Environment steps to train for, over all environments"
    )
    n_steps = qstab.Config(type=int, default=2048, help="Rollout length per environment")
    n_envs = qstab.Config(type=int, default=1, help="Environments collecting in parallel")
    batch_size = qstab.Config(type=int, default=256, help="Minibatch size")
    n_epochs = qstab.Config(type=int, default=10, help="Passes over each rollout")
    gamma = qstab.Config(type=float, default=0.99, help="Discount factor")
    gae_lambda = qstab.Config(type=float, default=0.95, help="GAE lambda")
    clip_range = qstab.Config(type=float, default=0.2, help="Clip range of the probability ratio")
    learning_rate = qstab.Config(
        type=float, default=5e-7, help="Initial learning rate, decays linearly to 0"
    )
    lr_schedule = qstab.Config(
        type=str, default="linear", choices=("linear", "constant"), help="Learning rate schedule"
    )
    ent_coef = qstab.Config(type=float, default=0.0, help="Entropy bonus coefficient")
    vf_coef = qstab.Config(type=float, default=0.5, help="Value loss coefficient")
    max_grad_norm = qstab.Config(type=float, default=0.5, help="Global gradient norm cap")
    hidden_sizes = qstab.Config(
        type=tuple, default=(128, 128), help="Hidden layer widths of both networks"
    )
    log_std_init = qstab.Config(type=float, default=0.0, help="Initial policy log_std")
    seed = qstab.Config(type=int, default=0, help="Root seed of all training randomness")
    max_workers = qstab.Config(
        type=int, default=1, help="Threads collecting rollouts (QSTAB_MAX_WORKERS overrides)"
    )

    def check(self):
        for name in ("total_steps", "n_steps", "n_envs", "batch_size", "n_epochs", "max_workers"):
            if self.config[name] < 1:
                raise qstab.InvalidConfiguration(f"{name} must be positive")
        if not 0 < self.gamma <= 1:
            raise qstab.InvalidConfiguration(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            raise qstab.InvalidConfiguration(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if not 0 < self.clip_range < 1:
            raise qstab.InvalidConfiguration(f"clip_range must be in (0, 1), got {self.clip_range}")
        if not self.learning_rate >= 0:
            raise qstab.InvalidConfiguration("learning_rate must be >= 0")
        for name in ("ent_coef", "vf_coef", "max_grad_norm"):
            if self.config[name] < 0:
                raise qstab.InvalidConfiguration(f"{name} must be >= 0")
        if not all(isinstance(h, int) and h > 0 for h in self.hidden_sizes):
            raise qstab.InvalidConfiguration(f"Invalid hidden_sizes {self.hidden_sizes}")

    def learning_rate_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.learning_rate
        return linear_schedule(self.learning_rate, step, self.total_steps)


@export
class RolloutBuffer:
    """Transitions of one environment's rollout, in collection order."""

    fields = ("obs", "actions", "logps", "rewards", "values", "dones", "advantages", "returns")

    def __init__(self):
        self._rows: ty.Dict[str, list] = dict(obs=[], actions=[], logps=[], rewards=[], dones=[])
        self.next_obs = []
        self.timeouts = []
        self.rewards = self.values = self.advantages = self.returns = None

    def __len__(self):
        if self.rewards is not None:
            return len(self.rewards)
        return len(self._rows["rewards"])

    def add(self, obs, action, logp, reward, next_obs, done, timeout=False):
        rows = self._rows
        rows["obs"].append(obs)
        rows["actions"].append(action)
        rows["logps"].append(logp)
        rows["rewards"].append(reward)
        rows["dones"].append(done)
        self.next_obs.append(next_obs)
        self.timeouts.append(timeout)

    def finish(self, value_net: ValueNet, gamma: float, lam: float):
        """Estimate values and fill advantages and return targets.

        Episodes cut by timeout get gamma V(next_obs) added to their last reward, the rollout
        tail is bootstrapped from V of the final observation.

        """
        self.obs = np.asarray(self._rows["obs"], dtype=np.float64)
        self.actions = np.asarray(self._rows["actions"], dtype=np.float64)
        self.logps = np.asarray(self._rows["logps"], dtype=np.float64)
        self.rewards = np.asarray(self._rows["rewards"], dtype=np.float64)
        self.dones = np.asarray(self._rows["dones"], dtype=bool)
        self.values = value_net(self.obs)

        timeouts = np.asarray(self.timeouts, dtype=bool)
        rewards = self.rewards.copy()
        if timeouts.any():
            next_obs = np.asarray(self.next_obs, dtype=np.float64)[timeouts]
            rewards[timeouts] += gamma * value_net(next_obs)
        last_value = 0.0 if self.dones[-1] else float(value_net(self.next_obs[-1]))
        self.advantages, self.returns = gae(
            rewards, self.values, self.dones, gamma, lam, last_value
        )
        return self

    @staticmethod
    def concatenate(buffers: ty.Sequence["RolloutBuffer"]) -> "RolloutBuffer":
        result = RolloutBuffer()
        for name in ("obs", "actions", "logps", "rewards", "dones", "values"):
            setattr(result, name, np.concatenate([getattr(b, name) for b in buffers]))
        result.advantages = np.concatenate([b.advantages for b in buffers])
        result.returns = np.concatenate([b.returns for b in buffers])
        return result

    def minibatches(self, batch_size: int, rng: np.random.Generator) -> ty.Iterator[MiniBatch]:
        """Shuffled minibatches covering the buffer once, advantages normalized per batch."""
        if self.advantages is None:
            raise RuntimeError("Call finish() before drawing minibatches")
        order = rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            yield MiniBatch(
                obs=self.obs[idx],
                actions=self.actions[idx],
                old_logps=self.logps[idx],
                advantages=normalize_advantages(self.advantages[idx]),
                returns=self.returns[idx],
            )


class _Collector:
    """Owns one environment and its random streams, keeps the episode going across rollouts."""

    def __init__(self, env, index: int, root_seed: int):
        self.env = env
        self.index = index
        self.root_seed = root_seed
        self.rng = np.random.default_rng(qstab.derive_seed(root_seed, "policy-sampling", index))
        self.n_episodes = 0
        self.obs = None
        self.episode_return = 0.0

    def _reset(self):
        seed = qstab.derive_seed(self.root_seed, "train", self.index, self.n_episodes)
        self.obs = self.env.reset(seed=seed)
        self.episode_return = 0.0

    def collect(self, policy: GaussianPolicy, n_steps: int):
        buffer = RolloutBuffer()
        finished = []
        if self.obs is None:
            self._reset()
        for _ in range(n_steps):
            action, logp = log_prob_and_sample(policy, self.obs, self.rng)
            transition = self.env.step(action)
            self.episode_return += transition.reward
            timeout = transition.termination_reason == "timeout"
            # Record the sampled action, the environment only clamps what it applies
            buffer.add(
                self.obs, action, logp, transition.reward, transition.next_obs,
                transition.done, timeout,
            )
            if transition.done:
                finished.append(
                    dict(
                        episode_return=self.episode_return,
                        final_distance=transition.distance,
                        success=transition.termination_reason == "success",
                    )
                )
                self.n_episodes += 1
                self._reset()
            else:
                self.obs = transition.next_obs
        return buffer, finished


@export
class PPOTrainer:
    """Trains a GaussianPolicy and a ValueNet on environments from env_factory.

    :param env_factory: env_factory(reward_spec, index) returns a fresh environment with
        reset(seed), step(action), observation_size and action_size, like QuantumFeedbackEnv.
    :param reward_spec: passed on to env_factory
    :param config: TrainConfig
    """

    def __init__(
        self,
        env_factory: ty.Callable,
        reward_spec: ty.Optional["qstab.RewardSpec"] = None,
        config: ty.Optional[TrainConfig] = None,
    ):
        self.log = logging.getLogger(self.__class__.__name__)
        self.config = config if config is not None else TrainConfig()
        self.reward_spec = reward_spec
        c = self.config
        envs = [env_factory(reward_spec, i) for i in range(c.n_envs)]
        self.observation_size = envs[0].observation_size
        self.action_size = envs[0].action_size
        self.collectors = [_Collector(env, i, c.seed) for i, env in enumerate(envs)]

        self.policy = make_policy(
            self.observation_size,
            self.action_size,
            c.hidden_sizes,
            c.log_std_init,
            seed=qstab.derive_seed(c.seed, "weight-init", "policy"),
        )
        self.value_net = make_value_net(
            self.observation_size,
            c.hidden_sizes,
            seed=qstab.derive_seed(c.seed, "weight-init", "value"),
        )
        self.policy_optimizer = qstab.Adam(self.policy.parameters(), c.learning_rate)
        self.value_optimizer = qstab.Adam(self.value_net.parameters(), c.learning_rate)
        self.minibatch_rng = np.random.default_rng(qstab.derive_seed(c.seed, "minibatch"))
        self.timesteps = 0
        self.iteration = 0
        self.history: ty.List[dict] = []

    def _collect(self, collector: _Collector, policy: GaussianPolicy):
        return collector.collect(policy, self.config.n_steps)

    def train_iteration(self) -> dict:
        c = self.config
        learning_rate = c.learning_rate_at(self.timesteps)
        # Behaviour policy for this iteration; workers only read it
        behaviour = self.policy.copy()
        results = qstab.run_parallel(
            self._collect,
            self.collectors,
            behaviour,
            max_workers=min(c.max_workers, c.n_envs),
            progress_bar=False,
            log=self.log,
        )
        buffers = [b.finish(self.value_net, c.gamma, c.gae_lambda) for b, _ in results]
        episodes = [e for _, finished in results for e in finished]
        buffer = RolloutBuffer.concatenate(buffers)
        self.timesteps += len(buffer)

        infos = []
        for _ in range(c.n_epochs):
            for batch in buffer.minibatches(c.batch_size, self.minibatch_rng):
                result = ppo_loss(
                    self.policy, batch.old_logps, batch, c.clip_range, c.ent_coef
                )
                qstab.clip_grad_norm(result.policy_grads, c.max_grad_norm)
                self.policy_optimizer.step(result.policy_grads, learning_rate)
                result.info["value_loss"] = td_value_update(
                    self.value_net,
                    batch.obs,
                    batch.returns,
                    self.value_optimizer,
                    c.max_grad_norm,
                    learning_rate,
                    coef=c.vf_coef,
                )
                infos.append(result.info)

        n_skipped = int(sum(i["n_skipped"] for i in infos))
        if n_skipped:
            self.log.warning(f"Skipped {n_skipped} samples with a non-finite probability ratio")
        row = dict(
            iteration=self.iteration,
            timesteps=self.timesteps,
            learning_rate=learning_rate,
            n_episodes=len(episodes),
            mean_episode_return=_mean([e["episode_return"] for e in episodes]),
            mean_final_distance=_mean([e["final_distance"] for e in episodes]),
            success_fraction=_mean([float(e["success"]) for e in episodes]),
            **{
                k: _mean([i[k] for i in infos])
                for k in ("policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl")
            },
            n_skipped=n_skipped,
        )
        self.iteration += 1
        self.history.append(row)

        if not (self.policy.all_finite() and self.value_net.all_finite()):
            raise TrainingDiverged(
                f"Non-finite parameters after iteration {row['iteration']} "
                f"({self.timesteps} steps)"
            )
        self.log.debug(f"Iteration {row['iteration']}: {row}")
        return row

    def learn(self, progress_bar=True, log_path=None, checkpoint_path=None) -> pd.DataFrame:
        """Train until total_steps; return the per-iteration log.

        :param log_path: append every iteration's row to this line-delimited json file
        :param checkpoint_path: where the diagnostic checkpoint goes if training diverges
        """
        c = self.config
        t0 = time.time()
        with qstab.tqdm(
            total=c.total_steps, desc="Training", disable=not progress_bar, unit="step"
        ) as pbar:
            while self.timesteps < c.total_steps:
                before = self.timesteps
                try:
                    row = self.train_iteration()
                except TrainingDiverged:
                    if checkpoint_path is not None:
                        self.save(checkpoint_path, diagnostic=True)
                        self.log.error(f"Wrote diagnostic checkpoint to {checkpoint_path}")
                    raise
                if log_path is not None:
                    qstab.write_jsonl(log_path, [row], mode="a")
                pbar.update(min(self.timesteps, c.total_steps) - before)
                pbar.set_postfix(ret=row["mean_episode_return"], succ=row["success_fraction"])
        self.log.info(
            f"Trained {self.timesteps} steps in {self.iteration} iterations "
            f"({time.time() - t0:.1f} s)"
        )
        return self.training_log()

    def training_log(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=TRAINING_LOG_COLUMNS)

    def checkpoint(self, diagnostic=False) -> dict:
        return agent_document(
            self.policy,
            self.value_net,
            config=self.config.to_dict(),
            timesteps=self.timesteps,
            iteration=self.iteration,
            rng=dict(
                seed=self.config.seed,
                minibatch=self.minibatch_rng.bit_generator.state,
                episodes=[col.n_episodes for col in self.collectors],
            ),
            optimizer=dict(
                policy=self.policy_optimizer.state_dict(), value=self.value_optimizer.state_dict()
            ),
            diagnostic=diagnostic,
        )

    def save(self, path, diagnostic=False, **extra):
        document = self.checkpoint(diagnostic)
        document.update(extra)
        qstab.save_checkpoint(path, document)


TRAINING_LOG_COLUMNS = [
    "iteration", "timesteps", "learning_rate", "n_episodes", "mean_episode_return",
    "mean_final_distance", "success_fraction", "policy_loss", "value_loss", "entropy",
    "clip_fraction", "approx_kl", "n_skipped",
]
__all__.append("TRAINING_LOG_COLUMNS")


def _mean(values) -> float:
    values = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(values)) if values else float("nan")


@export
def train(
    env_factory: ty.Callable,
    reward_spec: ty.Optional["qstab.RewardSpec"] = None,
    config: ty.Optional[TrainConfig] = None,
    progress_bar=True,
    log_path=None,
) -> ty.Tuple[GaussianPolicy, pd.DataFrame]:
    """Train a policy with PPO, return (policy, per-iteration training log)."""
    trainer = PPOTrainer(env_factory, reward_spec, config)
    log = trainer.learn(progress_bar=progress_bar, log_path=log_path)
    return trainer.policy, log


@export
def agent_document(policy: GaussianPolicy, value_net: ty.Optional[ValueNet] = None, **extra):
    """Json-able checkpoint document of a policy (and value network)."""
    document = dict(
        policy=policy.to_dict(),
        value_net=value_net.to_dict() if value_net is not None else None,
        observation_size=policy.observation_size,
        action_size=policy.action_size,
    )
    document.update(extra)
    return document


@export
def load_agent(path) -> ty.Tuple[GaussianPolicy, ty.Optional[ValueNet], dict]:
    """Return (policy, value network or None, full document) from a checkpoint file."""
    document = qstab.load_checkpoint(path)
    try:
        policy = GaussianPolicy.from_dict(document["policy"])
        value_net = (
            ValueNet.from_dict(document["value_net"]) if document.get("value_net") else None
        )
    except (KeyError, TypeError, ValueError) as e:
        raise qstab.IncompatibleCheckpoint(f"{path} does not hold a policy: {e}") from e
    return policy, value_net, document
