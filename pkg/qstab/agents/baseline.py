"""Controllers: a Lyapunov feedback law, trained policies, and no control at all.

Every controller maps the (observed) state rho to control amplitudes, and carries a name and
metadata that end up in evaluation reports.

"""

import typing as ty

import numba
import numpy as np
import pandas as pd

import qstab
from qstab.quantum.qmat import _commutator

export, __all__ = qstab.exporter()
__all__.extend(["BASELINE_LABEL"])

BASELINE_LABEL = "reconstructed baseline"


@export
class LyapunovConfig(qstab.ConfigSection):
    gain = qstab.Config(type=float, default=5.0, help="Feedback gain K")
    switch_threshold = qstab.Config(
        type=float,
        default=0.0,
        help="Below this overlap Tr(rho_d rho) apply switch_drive instead; 0 disables switching",
    )
    switch_drive = qstab.Config(
        type=float, default=1.0, help="Constant amplitude on every channel while switched"
    )

    def check(self):
        if not (np.isfinite(self.gain) and self.gain > 0):
            raise qstab.InvalidConfiguration(f"gain must be finite and positive, got {self.gain}")
        if not 0 <= self.switch_threshold < 1:
            raise qstab.InvalidConfiguration("switch_threshold must be in [0, 1)")


@numba.njit(nogil=True, cache=True)
def _lyapunov_gradient(controls, target, rho):
    """Im Tr(rho_d [H_j, rho]) per control channel."""
    n = controls.shape[0]
    out = np.zeros(n)
    for j in range(n):
        out[j] = np.trace(target @ _commutator(controls[j], rho)).imag
    return out


@export
def lyapunov_control(
    config: LyapunovConfig, system: "qstab.SystemSpec", target, rho
) -> np.ndarray:
    """u_j = clamp(K Im Tr(rho_d [H_j, rho])).

    With d rho = -i [H, rho] dt this is the direction in which V = 1 - Tr(rho_d rho) decreases
    fastest, so the control never makes the instantaneous drift of V worse than u = 0.

    """
    target = np.ascontiguousarray(target, dtype=np.complex128)
    rho = np.ascontiguousarray(rho, dtype=np.complex128)
    if config.switch_threshold > 0:
        overlap = float(np.trace(target @ rho).real)
        if overlap < config.switch_threshold:
            return system.clamp(np.full(system.n_controls, config.switch_drive))
    gradient = _lyapunov_gradient(system.controls, target, rho)
    return system.clamp(config.gain * gradient)


@export
class Controller:
    """Base class: call with a state, get control amplitudes."""

    name = "controller"

    def __call__(self, rho) -> np.ndarray:
        raise NotImplementedError

    def metadata(self) -> dict:
        return dict(controller=self.name)


@export
class ZeroController(Controller):
    name = "zero"

    def __init__(self, n_controls: int):
        self.n_controls = n_controls

    def __call__(self, rho) -> np.ndarray:
        return np.zeros(self.n_controls)


@export
class LyapunovController(Controller):
    name = "lyapunov"

    def __init__(self, system, target, config: ty.Optional[LyapunovConfig] = None):
        self.system = system
        self.target = qstab.check_pure_target(target)
        self.config = config if config is not None else LyapunovConfig()

    def __call__(self, rho) -> np.ndarray:
        return lyapunov_control(self.config, self.system, self.target, rho)

    def metadata(self) -> dict:
        return dict(controller=self.name, label=BASELINE_LABEL, **self.config.to_dict())


@export
class PolicyController(Controller):
    """Deterministic mean action of a trained policy."""

    name = "policy"

    def __init__(self, policy: "qstab.GaussianPolicy", system=None):
        self.policy = policy
        if system is not None:
            if policy.observation_size != 2 * system.dim**2:
                raise qstab.DimensionMismatch(
                    f"Policy observes {policy.observation_size} numbers, {system.name} states "
                    f"encode to {2 * system.dim ** 2}"
                )
            if policy.action_size != system.n_controls:
                raise qstab.DimensionMismatch(
                    f"Policy has {policy.action_size} actions, {system.name} has "
                    f"{system.n_controls} controls"
                )

    def __call__(self, rho) -> np.ndarray:
        mean, _ = qstab.forward_policy(self.policy, qstab.encode(rho))
        return mean

    def metadata(self) -> dict:
        return dict(controller=self.name, actions="deterministic mean")


@export
def tune_lyapunov_gain(
    system: "qstab.SystemSpec",
    target,
    gains: ty.Sequence[float],
    protocol: ty.Optional["qstab.EvalProtocol"] = None,
    base_config: ty.Optional[LyapunovConfig] = None,
    progress_bar=False,
) -> ty.Tuple[float, pd.DataFrame]:
    """Evaluate the Lyapunov controller for each gain, return (best gain, table).

    Best means the shortest mean stabilization time, ties broken by success rate.

    """
    if not len(gains):
        raise ValueError("Need at least one gain")
    protocol = protocol if protocol is not None else qstab.EvalProtocol()
    base_config = base_config if base_config is not None else LyapunovConfig()
    rows = []
    for gain in gains:
        controller = LyapunovController(system, target, base_config.replace(gain=float(gain)))
        report = qstab.evaluate_controller(
            controller, system, target, protocol, progress_bar=progress_bar
        )
        rows.append(
            dict(
                gain=float(gain),
                mean_time=report.mean_time,
                success_rate=report.success_rate,
                label=BASELINE_LABEL,
            )
        )
    table = pd.DataFrame(rows)
    best = table.sort_values(["mean_time", "success_rate"], ascending=[True, False]).iloc[0]
    return float(best["gain"]), table
