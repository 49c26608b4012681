"""Episodic environment around the stochastic master equation.

The agent observes the flattened density matrix (optionally a fixed number of steps stale), and
applies control amplitudes; rewards and termination always look at the true current state.

"""

import collections
import logging
import typing as ty

import numpy as np

import qstab
from qstab.quantum.qmat import _distance

export, __all__ = qstab.exporter()
__all__.extend(["INITIAL_STATE_MODES"])

INITIAL_STATE_MODES = ("haar_pure", "random_diagonal", "fixed:<state name>")


@export
class EpisodeFinished(RuntimeError):
    pass


@export
class EpisodeConfig(qstab.ConfigSection):
    max_time = qstab.Config(
        type=float, default=20.0, help="Episode length T [a.u.], an integer number of steps"
    )
    dt = qstab.Config(type=float, default=0.001, help="Step size [a.u.], must match the system")
    success_window = qstab.Config(
        type=int,
        default=10,
        help="Consecutive steps with distance <= partition_d that count as stabilized",
    )
    partition_d = qstab.Config(
        type=float, default=0.001, help="Distance below which the state counts as on target"
    )
    delay_steps = qstab.Config(
        type=int, default=0, help="How many steps the observation lags behind the true state"
    )
    initial_state_mode = qstab.Config(
        type=str,
        default="haar_pure",
        help="haar_pure, random_diagonal or fixed:<state name> (e.g. fixed:rho01)",
    )

    def check(self):
        if not self.dt > 0 or not self.max_time > 0:
            raise qstab.InvalidConfiguration("max_time and dt must be positive")
        n = self.max_time / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise qstab.InvalidConfiguration(
                f"max_time {self.max_time} is not an integer number of steps of {self.dt}"
            )
        if self.success_window < 1:
            raise qstab.InvalidConfiguration("success_window must be at least 1")
        if self.delay_steps < 0:
            raise qstab.InvalidConfiguration("delay_steps must be >= 0")
        if not 0 < self.partition_d < 1:
            raise qstab.InvalidConfiguration("partition_d must be in (0, 1)")
        mode = self.initial_state_mode
        if mode not in ("haar_pure", "random_diagonal") and not mode.startswith("fixed:"):
            raise qstab.InvalidConfiguration(
                f"Unknown initial_state_mode {mode!r}, use one of {INITIAL_STATE_MODES}"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.max_time / self.dt))


@export
class Transition(ty.NamedTuple):
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    # None while the episode runs, else "success", "timeout" or "diverged"
    termination_reason: ty.Optional[str]
    step_index: int
    distance: float


@export
def encode(rho) -> np.ndarray:
    """Flatten rho: real parts row-major, then imaginary parts row-major."""
    rho = np.asarray(rho)
    return np.concatenate([rho.real.ravel(), rho.imag.ravel()]).astype(np.float64)


@export
def decode(obs) -> np.ndarray:
    """Inverse of encode."""
    obs = np.asarray(obs, dtype=np.float64).ravel()
    n = int(round(np.sqrt(len(obs) / 2)))
    if 2 * n * n != len(obs) or not n:
        raise qstab.DimensionMismatch(f"Observation of length {len(obs)} is not 2 n^2")
    half = n * n
    return (obs[:half] + 1j * obs[half:]).reshape(n, n)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@export
def sample_haar_pure(dim: int, seed=None) -> np.ndarray:
    """Haar-random pure state from a normalized complex Gaussian vector.

    :param seed: integer seed or a numpy Generator
    """
    rng = _rng(seed)
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return qstab.pure_state(psi)


@export
def sample_random_diagonal(dim: int, seed=None) -> np.ndarray:
    """Diagonal state with populations drawn uniformly from the simplex."""
    rng = _rng(seed)
    return np.diag(rng.dirichlet(np.ones(dim))).astype(np.complex128)


@export
def sample_initial_state(mode: str, dim: int, seed=None) -> np.ndarray:
    if mode == "haar_pure":
        return sample_haar_pure(dim, seed)
    if mode == "random_diagonal":
        return sample_random_diagonal(dim, seed)
    if mode.startswith("fixed:"):
        return qstab.get_state(mode[len("fixed:") :], dim)
    raise qstab.InvalidConfiguration(f"Unknown initial state mode {mode!r}")


@export
class QuantumFeedbackEnv:
    """One episode at a time of closed-loop control of a continuously measured system.

    Not thread-safe: use one instance per worker.
    """

    def __init__(
        self,
        system: "qstab.SystemSpec",
        target,
        reward_spec: ty.Optional["qstab.RewardSpec"] = None,
        config: ty.Optional[EpisodeConfig] = None,
    ):
        self.log = logging.getLogger(self.__class__.__name__)
        self.system = system
        self.config = config if config is not None else EpisodeConfig(dt=system.dt)
        self.reward_spec = reward_spec if reward_spec is not None else qstab.RewardSpec()
        self.target = qstab.check_pure_target(target)
        if self.target.shape != (system.dim, system.dim):
            raise qstab.DimensionMismatch(
                f"Target has shape {self.target.shape}, {system.name} has dimension {system.dim}"
            )
        if abs(self.config.dt - system.dt) > 1e-12:
            raise qstab.InvalidConfiguration(
                f"Episode dt {self.config.dt} differs from the system dt {system.dt}"
            )
        if self.reward_spec.partitioned and self.reward_spec.d != self.config.partition_d:
            self.log.warning(
                f"Reward partition {self.reward_spec.d} differs from the success "
                f"threshold {self.config.partition_d}"
            )
        self._floor = qstab.reward_floor(self.reward_spec)
        self._n_steps = self.config.n_steps
        self._done = True
        self._rho = None
        self._delayed: ty.Deque[np.ndarray] = collections.deque()

    @property
    def observation_size(self) -> int:
        return 2 * self.system.dim**2

    @property
    def action_size(self) -> int:
        return self.system.n_controls

    @property
    def state(self) -> np.ndarray:
        """Copy of the true current state."""
        if self._rho is None:
            raise EpisodeFinished("Call reset() first")
        return self._rho.copy()

    @property
    def step_index(self) -> int:
        return self._step_index

    @property
    def time(self) -> float:
        return self._step_index * self.system.dt

    @property
    def done(self) -> bool:
        return self._done

    def distance(self, rho=None) -> float:
        rho = self._rho if rho is None else qstab.as_matrix(rho)
        return qstab.clamp_distance(_distance(self.target, rho))

    def reset(self, seed=None, initial_state=None) -> np.ndarray:
        """Start an episode, return the first observation.

        :param seed: seeds both the initial state sample and the measurement noise.
        :param initial_state: start here instead of sampling per initial_state_mode.
        """
        if seed is None:
            seed = int(np.random.SeedSequence().entropy) & (2**63 - 1)
        self.seed = seed
        if initial_state is None:
            rho0 = sample_initial_state(
                self.config.initial_state_mode,
                self.system.dim,
                qstab.derive_seed(seed, "init-states"),
            )
        else:
            rho0 = qstab.as_matrix(initial_state, "initial_state")
            if rho0.shape != self.target.shape:
                raise qstab.DimensionMismatch(f"Initial state has shape {rho0.shape}")
        self.noise = qstab.NoiseStream(qstab.derive_seed(seed, "sme-noise"))
        self._rho = rho0
        self._delayed = collections.deque(
            [rho0] * (self.config.delay_steps + 1), maxlen=self.config.delay_steps + 1
        )
        self._step_index = 0
        self._in_zone = 0
        self._done = False
        self._distance = self.distance(rho0)
        self.log.debug(f"Reset with seed {seed}, initial distance {self._distance:.4g}")
        return encode(rho0)

    def observe(self) -> np.ndarray:
        """The observation the agent currently sees."""
        return encode(self._delayed[0])

    def step(self, action) -> Transition:
        if self._done:
            raise EpisodeFinished("Episode is over, call reset()")
        obs = self.observe()
        u = self.system.clamp(action)
        self._step_index += 1

        try:
            outcome = qstab.sme_step(self.system, self._rho, u, self.noise)
        except qstab.TrajectoryDiverged as e:
            self.log.warning(f"Episode with seed {self.seed} diverged: {e}")
            self._done = True
            return Transition(
                obs=obs,
                action=u,
                reward=self._floor,
                next_obs=obs,
                done=True,
                termination_reason="diverged",
                step_index=self._step_index,
                distance=self._distance,
            )

        self._rho = outcome.next_state
        self._delayed.append(self._rho)
        self._distance = self.distance()
        reward = qstab.evaluate(self.reward_spec, self._distance, self._step_index)

        if self._distance <= self.config.partition_d:
            self._in_zone += 1
        else:
            self._in_zone = 0
        reason = None
        if self._in_zone >= self.config.success_window:
            reason = "success"
        elif self._step_index >= self._n_steps:
            reason = "timeout"
        self._done = reason is not None

        return Transition(
            obs=obs,
            action=u,
            reward=reward,
            next_obs=self.observe(),
            done=self._done,
            termination_reason=reason,
            step_index=self._step_index,
            distance=self._distance,
        )


@export
def transition_record(transition: Transition, include_observations=False) -> dict:
    """Transition as a json-able dict for line-delimited logs."""
    record = dict(
        step_index=transition.step_index,
        action=transition.action,
        reward=transition.reward,
        distance=transition.distance,
        done=transition.done,
        termination_reason=transition.termination_reason,
    )
    if include_observations:
        record["obs"] = transition.obs
        record["next_obs"] = transition.next_obs
    return record


@export
def write_transitions(path, transitions: ty.Iterable[Transition], include_observations=False):
    return qstab.write_jsonl(
        path, (transition_record(t, include_observations) for t in transitions)
    )
