"""Euler-Maruyama integration of the stochastic master equation

    d rho = -i[H0 + sum_j u_j H_j, rho] dt + kappa D[c] rho dt + sqrt(eta kappa) H[c] rho dW
    dy    = sqrt(eta kappa) Tr[(c + c^H) rho] dt + dW

followed by a repair onto the closest physical state.

"""

import logging
import typing as ty

import numba
import numpy as np

import qstab
from .qmat import (
    _commutator,
    _dissipator,
    _distance,
    _expectation,
    _innovation,
    _raise_for_status,
    _repair,
    _adjoint,
)

export, __all__ = qstab.exporter()

log = logging.getLogger("qstab.sme")


@export
class SystemSpec:
    """One quantum control problem: Hamiltonians, measured observable, rates and action bounds.

    :param kappa_c: measurement strength, must be > 0.
    :param eta_c: measurement efficiency in [0, 1]. 0 is accepted and leaves only the
        unconditioned Lindblad evolution, with a record that is pure noise.
    """

    def __init__(
        self,
        h0,
        controls: ty.Sequence,
        observable,
        kappa_c: float = 1.0,
        eta_c: float = 1.0,
        dt: float = 0.001,
        action_low=-1.0,
        action_high=1.0,
        name: str = "custom",
        tolerances=qstab.TOLERANCES,
    ):
        self.name = name
        self.h0 = qstab.check_hermitian(h0, "h0", tolerances.hermitian)
        if not len(controls):
            raise ValueError("Need at least one control Hamiltonian")
        self.controls = np.ascontiguousarray(
            np.stack([
                qstab.check_hermitian(h, f"control {j}", tolerances.hermitian)
                for j, h in enumerate(controls)
            ])
        )
        self.observable = qstab.check_hermitian(observable, "observable", tolerances.hermitian)
        dims = {self.h0.shape, self.controls.shape[1:], self.observable.shape}
        if len(dims) != 1:
            raise qstab.DimensionMismatch(f"Operators of {name} have different shapes {dims}")

        self.kappa_c = float(kappa_c)
        self.eta_c = float(eta_c)
        self.dt = float(dt)
        if not self.kappa_c > 0:
            raise ValueError(f"kappa_c must be > 0, got {kappa_c}")
        if not 0 <= self.eta_c <= 1:
            raise ValueError(f"eta_c must be in [0, 1], got {eta_c}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")

        m = self.n_controls
        self.action_low = np.broadcast_to(np.asarray(action_low, dtype=np.float64), (m,)).copy()
        self.action_high = np.broadcast_to(np.asarray(action_high, dtype=np.float64), (m,)).copy()
        if not np.all(self.action_low < self.action_high):
            raise ValueError(
                f"Action bounds need low < high, got {self.action_low} and {self.action_high}"
            )

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]

    @property
    def measurement_rate(self) -> float:
        """sqrt(eta_c kappa_c), the weight of the stochastic terms."""
        return float(np.sqrt(self.eta_c * self.kappa_c))

    def clamp(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64).ravel()
        if len(u) != self.n_controls:
            raise qstab.DimensionMismatch(
                f"{self.name} has {self.n_controls} control channels, got {len(u)} amplitudes"
            )
        return np.clip(u, self.action_low, self.action_high)

    def replace(self, **changes) -> "SystemSpec":
        kwargs = dict(
            h0=self.h0,
            controls=list(self.controls),
            observable=self.observable,
            kappa_c=self.kappa_c,
            eta_c=self.eta_c,
            dt=self.dt,
            action_low=self.action_low,
            action_high=self.action_high,
            name=self.name,
        )
        kwargs.update(changes)
        return SystemSpec(**kwargs)

    def to_dict(self) -> dict:
        return dict(
            name=self.name,
            h0=qstab.matrix_to_json(self.h0),
            controls=[qstab.matrix_to_json(h) for h in self.controls],
            observable=qstab.matrix_to_json(self.observable),
            kappa_c=self.kappa_c,
            eta_c=self.eta_c,
            dt=self.dt,
            action_low=self.action_low.tolist(),
            action_high=self.action_high.tolist(),
        )

    @classmethod
    def from_dict(cls, d: ty.Mapping) -> "SystemSpec":
        d = dict(d)
        unknown = set(d) - {
            "name",
            "h0",
            "controls",
            "observable",
            "kappa_c",
            "eta_c",
            "dt",
            "action_low",
            "action_high",
        }
        if unknown:
            raise qstab.InvalidConfiguration(f"Unknown system field(s) {sorted(unknown)}")
        try:
            return cls(
                h0=qstab.matrix_from_json(d["h0"]),
                controls=[qstab.matrix_from_json(h) for h in d["controls"]],
                observable=qstab.matrix_from_json(d["observable"]),
                **{
                    k: d[k]
                    for k in ("kappa_c", "eta_c", "dt", "action_low", "action_high", "name")
                    if k in d
                },
            )
        except KeyError as e:
            raise qstab.InvalidConfiguration(f"System definition misses field {e}")

    def __repr__(self):
        return (
            f"SystemSpec({self.name}, dim={self.dim}, n_controls={self.n_controls}, "
            f"kappa_c={self.kappa_c}, eta_c={self.eta_c}, dt={self.dt})"
        )


@export
class StepOutcome(ty.NamedTuple):
    next_state: np.ndarray
    # Measurement record increment
    dy: float
    # Wiener increment actually used
    dw: float
    # Whether the physical repair changed the state
    projected: bool


@numba.njit(nogil=True, cache=True)
def _hamiltonian(h0, controls, u):
    h = h0.copy()
    for j in range(len(u)):
        h += u[j] * controls[j]
    return h


@numba.njit(nogil=True, cache=True)
def _drift(h0, controls, u, c, kappa, rho):
    h = _hamiltonian(h0, controls, u)
    return -1j * _commutator(h, rho) + kappa * _dissipator(c, rho)


@numba.njit(nogil=True, cache=True)
def _euler_maruyama(h0, controls, u, c, kappa, rate, dt, rho, dw):
    """One unrepaired step and the measurement record increment."""
    increment = _drift(h0, controls, u, c, kappa, rho) * dt
    if rate != 0.0:
        increment += rate * dw * _innovation(c, rho)
    dy = rate * _expectation(c + _adjoint(c), rho) * dt + dw
    return rho + increment, dy


@numba.njit(nogil=True, cache=True)
def _step(h0, controls, u, c, kappa, rate, dt, rho, dw, tolerances):
    raw, dy = _euler_maruyama(h0, controls, u, c, kappa, rate, dt, rho, dw)
    next_state, changed, status = _repair(
        raw, tolerances[0], tolerances[1], tolerances[2], int(tolerances[3])
    )
    return next_state, dy, changed, status


def _repair_settings(tolerances=qstab.TOLERANCES):
    return np.array([
        tolerances.eigenvalue_change,
        tolerances.divergence_trace,
        tolerances.jacobi_relative,
        tolerances.jacobi_max_sweeps,
    ])


_DEFAULT_REPAIR = _repair_settings()


def _as_state(spec, rho, name="rho"):
    rho = qstab.as_matrix(rho, name)
    if rho.shape[0] != spec.dim:
        raise qstab.DimensionMismatch(
            f"{name} has dimension {rho.shape[0]}, {spec.name} has dimension {spec.dim}"
        )
    return rho


@export
def deterministic_drift(spec: SystemSpec, rho, u) -> np.ndarray:
    """The dt terms -i[H0 + sum_j u_j H_j, rho] + kappa D[c] rho (u is clamped first)."""
    rho = _as_state(spec, rho)
    return _drift(spec.h0, spec.controls, spec.clamp(u), spec.observable, spec.kappa_c, rho)


@export
def sme_step(
    spec: SystemSpec,
    rho,
    u,
    noise: ty.Optional["qstab.NoiseStream"] = None,
    dw: ty.Optional[float] = None,
) -> StepOutcome:
    """Advance rho by one Euler-Maruyama step of spec.dt.

    :param u: control amplitudes, clamped to the action bounds before use.
    :param noise: stream to draw the Wiener increment from.
    :param dw: use this Wiener increment instead of drawing one (noise is then not advanced).
    """
    rho = _as_state(spec, rho)
    u = spec.clamp(u)
    if dw is None:
        if noise is None:
            raise ValueError("Pass a NoiseStream or an explicit dw")
        dw = qstab.draw_dw(noise, spec.dt)
    next_state, dy, changed, status = _step(
        spec.h0,
        spec.controls,
        u,
        spec.observable,
        spec.kappa_c,
        spec.measurement_rate,
        spec.dt,
        rho,
        float(dw),
        _DEFAULT_REPAIR,
    )
    if status:
        log.debug(f"{spec.name}: step from state with trace {np.trace(rho).real} failed")
        _raise_for_status(status, rho)
    return StepOutcome(next_state=next_state, dy=float(dy), dw=float(dw), projected=bool(changed))


@export
def integrate_trajectory(
    spec: SystemSpec,
    rho0,
    controller: ty.Callable,
    n_steps: int,
    noise: "qstab.NoiseStream",
    target,
    dump_path=None,
) -> ty.Tuple[np.ndarray, np.ndarray]:
    """Run controller in closed loop for n_steps steps.

    :param controller: called with the current state, returns control amplitudes.
    :param dump_path: if given, also write the records as line-delimited json.
    :return: (records of qstab.trajectory_dtype, final state)
    """
    target = _as_state(spec, qstab.check_pure_target(target), "target")
    rho = _as_state(spec, rho0, "rho0")
    records = np.zeros(n_steps, dtype=qstab.trajectory_dtype(spec.n_controls))
    for i in range(n_steps):
        u = spec.clamp(controller(rho))
        outcome = sme_step(spec, rho, u, noise)
        rho = outcome.next_state
        records["time"][i] = (i + 1) * spec.dt
        records["distance"][i] = qstab.clamp_distance(_distance(target, rho))
        records["u"][i] = u
        records["dy"][i] = outcome.dy
        records["projected"][i] = outcome.projected
    if dump_path is not None:
        dump_trajectory(dump_path, records)
    return records, rho


@export
def dump_trajectory(path, records: np.ndarray):
    """Write trajectory records as line-delimited json, one object per step."""
    return qstab.write_jsonl(
        path,
        (
            dict(
                t=float(r["time"]),
                distance=float(r["distance"]),
                u=r["u"].tolist(),
                dy=float(r["dy"]),
                projected=bool(r["projected"]),
            )
            for r in records
        ),
    )
