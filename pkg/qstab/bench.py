"""Evaluation of controllers on grids of initial states and noise realizations.

A protocol fixes n_initial_states initial states, each run with n_noise_realizations measurement
noise seeds, for at most t_max. Per trajectory we record when it stabilized (the distance stays
below the success threshold for success_window steps); trajectories that never do count as t_max.

"""

import json
import logging
import os
import typing as ty

import numba
import numpy as np
import pandas as pd
from deepdiff import DeepDiff

import qstab

export, __all__ = qstab.exporter()

log = logging.getLogger("qstab.bench")


@export
class EvalProtocol(qstab.ConfigSection):
    n_initial_states = qstab.Config(type=int, default=50, help="Number of initial states")
    n_noise_realizations = qstab.Config(
        type=int, default=50, help="Measurement noise realizations per initial state"
    )
    t_max = qstab.Config(
        type=float, default=100.0, help="Time after which a trajectory counts as not converged"
    )
    success_threshold = qstab.Config(
        type=float, default=0.001, help="Distance that counts as stabilized"
    )
    success_window = qstab.Config(
        type=int, default=10, help="Steps the distance has to stay below the threshold"
    )
    initial_state_mode = qstab.Config(
        type=str, default="haar_pure", help="haar_pure, random_diagonal or fixed:<state name>"
    )
    seed = qstab.Config(type=int, default=0, help="Root seed of initial states and noise")
    downsample = qstab.Config(
        type=int, default=10, help="Keep every n-th point of the distance curves"
    )
    full_resolution = qstab.Config(
        type=bool, default=False, help="Keep every point of the distance curves"
    )
    eta_c = qstab.Config(
        type=float, default=None, help="Measurement efficiency override, None keeps the system's"
    )
    delay_steps = qstab.Config(type=int, default=0, help="Observation delay in steps")
    max_workers = qstab.Config(
        type=int, default=1, help="Threads running initial states (QSTAB_MAX_WORKERS overrides)"
    )

    def check(self):
        for name in ("n_initial_states", "n_noise_realizations", "success_window", "downsample"):
            if self.config[name] < 1:
                raise qstab.InvalidConfiguration(f"{name} must be positive")
        if not self.t_max > 0:
            raise qstab.InvalidConfiguration("t_max must be positive")
        if not 0 < self.success_threshold < 1:
            raise qstab.InvalidConfiguration("success_threshold must be in (0, 1)")
        if self.eta_c is not None and not 0 <= self.eta_c <= 1:
            raise qstab.InvalidConfiguration(f"eta_c must be in [0, 1], got {self.eta_c}")
        if self.delay_steps < 0:
            raise qstab.InvalidConfiguration("delay_steps must be >= 0")

    @property
    def n_trajectories(self) -> int:
        return self.n_initial_states * self.n_noise_realizations

    @property
    def curve_step(self) -> int:
        return 1 if self.full_resolution else self.downsample


@numba.njit(nogil=True, cache=True)
def _first_stable_index(curve, threshold, window):
    """First index from which window consecutive points are <= threshold, -1 if none."""
    run = 0
    for i in range(len(curve)):
        if curve[i] <= threshold:
            run += 1
            if run >= window:
                return i - window + 1
        else:
            run = 0
    return -1


@export
def stabilization_time(distance_curve, d, dt, t_max=None, window=10) -> float:
    """First time the distance is <= d and stays there for window samples, t_max if never.

    :param distance_curve: distance sampled every dt, starting at t = 0
    :param t_max: defaults to the time of the last sample
    """
    curve = np.asarray(distance_curve, dtype=np.float64)
    if not len(curve):
        raise ValueError("Cannot compute a stabilization time of an empty curve")
    if t_max is None:
        t_max = (len(curve) - 1) * dt
    index = _first_stable_index(curve, float(d), int(window))
    return float(t_max) if index < 0 else index * dt


@export
class EvalReport:
    """Per-trajectory results of one evaluation, and their aggregates.

    :param trajectories: one row per trajectory, columns of qstab.evaluation_dtype
    :param curves: distance curves, shape (n_initial_states, n_noise_realizations, n_points)
    :param times: time of each curve point
    """

    def __init__(
        self,
        trajectories: pd.DataFrame,
        curves: np.ndarray,
        times: np.ndarray,
        protocol: EvalProtocol,
        metadata: ty.Optional[dict] = None,
    ):
        self.trajectories = trajectories
        self.curves = np.asarray(curves, dtype=np.float64)
        self.times = np.asarray(times, dtype=np.float64)
        self.protocol = protocol
        self.metadata = dict(metadata or {})

    @property
    def mean_time(self) -> float:
        return float(self.trajectories["stabilization_time"].mean())

    @property
    def stderr_time(self) -> float:
        t = self.trajectories["stabilization_time"]
        return float(t.std(ddof=1) / np.sqrt(len(t))) if len(t) > 1 else 0.0

    @property
    def success_rate(self) -> float:
        return float(self.trajectories["success"].mean())

    @property
    def n_diverged(self) -> int:
        return int(self.trajectories["diverged"].sum())

    @property
    def per_state_mean_curves(self) -> np.ndarray:
        return self.curves.mean(axis=1)

    @property
    def grand_mean_curve(self) -> np.ndarray:
        return self.per_state_mean_curves.mean(axis=0)

    @property
    def tags(self) -> ty.List[str]:
        tags = []
        if self.metadata.get("eta_c") is not None:
            tags.append(f"eta={self.metadata['eta_c']:g}")
        if self.metadata.get("delay", 0):
            tags.append(f"delay={self.metadata['delay']:g}")
        return tags

    @property
    def tag(self) -> str:
        return "_".join(self.tags) or "perfect"

    def summary(self) -> dict:
        return dict(
            mean_time=self.mean_time,
            stderr_time=self.stderr_time,
            success_rate=self.success_rate,
            n_trajectories=len(self.trajectories),
            n_diverged=self.n_diverged,
            final_mean_distance=float(self.grand_mean_curve[-1]),
            tags=self.tags,
            protocol=self.protocol.to_dict(),
            metadata=self.metadata,
        )

    def mean_curve_frame(self) -> pd.DataFrame:
        per_state = self.per_state_mean_curves
        stderr = (
            per_state.std(axis=0, ddof=1) / np.sqrt(len(per_state))
            if len(per_state) > 1
            else np.zeros(len(self.times))
        )
        return pd.DataFrame(dict(t=self.times, mean_distance=self.grand_mean_curve, stderr=stderr))

    def save(self, directory, name=None) -> ty.Dict[str, str]:
        """Write trajectory CSV, summary JSON and mean curve CSV; return their paths."""
        name = name or f"{self.metadata.get('controller', 'eval')}_{self.tag}"
        os.makedirs(directory, exist_ok=True)
        paths = dict(
            trajectories=os.path.join(directory, f"{name}_trajectories.csv"),
            summary=os.path.join(directory, f"{name}_summary.json"),
            mean_curve=os.path.join(directory, f"{name}_mean_curve.csv"),
        )
        self.trajectories.to_csv(paths["trajectories"], index=False)
        with open(paths["summary"], mode="w") as f:
            json.dump(self.summary(), f, cls=qstab.NumpyJSONEncoder, indent=2)
        self.mean_curve_frame().to_csv(paths["mean_curve"], index=False)
        return paths

    def __repr__(self):
        return (
            f"EvalReport({self.tag}, mean_time={self.mean_time:.4g}, "
            f"success_rate={self.success_rate:.4g}, n={len(self.trajectories)})"
        )


def _run_initial_state(
    state_index: int,
    controller,
    system,
    target,
    protocol: EvalProtocol,
    episode_config: "qstab.EpisodeConfig",
):
    """All noise realizations of one initial state. Returns (records, curves)."""
    reward_spec = qstab.RewardSpec(d=protocol.success_threshold)
    env = qstab.QuantumFeedbackEnv(system, target, reward_spec, episode_config)
    rho0 = qstab.sample_initial_state(
        protocol.initial_state_mode,
        system.dim,
        qstab.derive_seed(protocol.seed, "init-states", state_index),
    )
    n_points = episode_config.n_steps + 1
    records = np.zeros(protocol.n_noise_realizations, dtype=qstab.evaluation_dtype())
    curves = np.zeros((protocol.n_noise_realizations, n_points))

    for j in range(protocol.n_noise_realizations):
        obs = env.reset(
            seed=qstab.derive_seed(protocol.seed, "eval", state_index, j), initial_state=rho0
        )
        curve = curves[j]
        curve[0] = env.distance()
        reason = None
        while not env.done:
            transition = env.step(controller(qstab.decode(obs)))
            obs = transition.next_obs
            curve[transition.step_index] = transition.distance
            reason = transition.termination_reason
        n_steps = env.step_index
        # Runs stop once stabilized; hold the last distance
        curve[n_steps + 1 :] = curve[n_steps]

        t = stabilization_time(
            curve, protocol.success_threshold, system.dt, protocol.t_max, protocol.success_window
        )
        records["initial_state"][j] = state_index
        records["noise_realization"][j] = j
        records["stabilization_time"][j] = t
        records["success"][j] = t < protocol.t_max
        records["diverged"][j] = reason == "diverged"
        records["final_distance"][j] = curve[n_steps]
        records["n_steps"][j] = n_steps
    return records, curves[:, :: protocol.curve_step]


@export
def evaluate_controller(
    controller: ty.Callable,
    system: "qstab.SystemSpec",
    target,
    protocol: ty.Optional[EvalProtocol] = None,
    progress_bar=True,
) -> EvalReport:
    """Run controller on the protocol's grid of initial states and noise realizations.

    Initial states run in parallel; results do not depend on the number of workers.

    """
    protocol = protocol if protocol is not None else EvalProtocol()
    if protocol.eta_c is not None:
        system = system.replace(eta_c=protocol.eta_c)
    episode_config = qstab.EpisodeConfig(
        max_time=protocol.t_max,
        dt=system.dt,
        success_window=protocol.success_window,
        partition_d=protocol.success_threshold,
        delay_steps=protocol.delay_steps,
        initial_state_mode=protocol.initial_state_mode,
    )
    results = qstab.run_parallel(
        _run_initial_state,
        range(protocol.n_initial_states),
        controller,
        system,
        target,
        protocol,
        episode_config,
        max_workers=protocol.max_workers,
        progress_bar=progress_bar,
        desc=f"Evaluating {getattr(controller, 'name', 'controller')}",
        log=log,
    )
    records = np.concatenate([r for r, _ in results])
    curves = np.stack([c for _, c in results])
    times = np.arange(episode_config.n_steps + 1)[:: protocol.curve_step] * system.dt

    metadata = dict(
        controller=getattr(controller, "name", "custom"),
        system=system.name,
        eta_c=protocol.eta_c,
        delay=protocol.delay_steps * system.dt,
        delay_steps=protocol.delay_steps,
    )
    if hasattr(controller, "metadata"):
        metadata.update(controller.metadata())
    report = EvalReport(pd.DataFrame(records), curves, times, protocol, metadata)
    if report.n_diverged:
        log.warning(f"{report.n_diverged} of {len(records)} trajectories diverged")
    log.info(f"Evaluated {metadata['controller']} on {system.name}: {report}")
    return report


@export
def compare_reports(a: EvalReport, b: EvalReport) -> dict:
    """How much faster a stabilizes than b.

    relative_time_reduction is (b - a) / b of the mean times, success_rate_delta is a - b.
    Differing protocols are reported under protocol_differences.

    """
    differences = DeepDiff(b.protocol.to_dict(), a.protocol.to_dict())
    if differences:
        log.warning(f"Comparing reports of different protocols: {differences}")
    reduction = (
        (b.mean_time - a.mean_time) / b.mean_time if b.mean_time > 0 else float("nan")
    )
    return dict(
        mean_time_a=a.mean_time,
        mean_time_b=b.mean_time,
        relative_time_reduction=reduction,
        success_rate_a=a.success_rate,
        success_rate_b=b.success_rate,
        success_rate_delta=a.success_rate - b.success_rate,
        protocols_match=not differences,
        protocol_differences=differences.to_dict() if differences else {},
    )


@export
def ablation_table(results: ty.Sequence[ty.Tuple["qstab.RewardSpec", ty.Any]]) -> pd.DataFrame:
    """One row per reward variant: its description, mean time and success rate.

    :param results: (reward spec, EvalReport or the exception that stopped that variant)
    """
    rows = []
    for spec, outcome in results:
        row = qstab.describe_reward(spec)
        if isinstance(outcome, EvalReport):
            row.update({"mean time": outcome.mean_time, "success rate": outcome.success_rate})
            row["error"] = ""
        else:
            row.update({"mean time": float("nan"), "success rate": float("nan")})
            row["error"] = f"{type(outcome).__name__}: {outcome}"
        rows.append(row)
    return pd.DataFrame(rows)
