"""The shipped control problems and named states."""

import typing as ty

import numpy as np
from immutabledict import immutabledict

import qstab
from qstab.quantum.qmat import IDENTITY2, SIGMA_X, SIGMA_Y, SIGMA_Z

export, __all__ = qstab.exporter()
__all__.extend(["SYSTEMS", "NAMED_STATES"])


@export
class SystemCatalogEntry(ty.NamedTuple):
    name: str
    description: str
    system: "qstab.SystemSpec"
    target: np.ndarray
    # Episode length used for training and display [a.u.]
    max_time: float
    # Named states that make sense as fixed initial states
    initial_states: ty.Tuple[str, ...] = ()


@export
def bell_state() -> np.ndarray:
    """Symmetric two-qubit Bell state (|01> + |10>) / sqrt(2)."""
    return qstab.pure_state([0, 1, 1, 0])


@export
def ghz_state(n_qubits=3) -> np.ndarray:
    """(|0...0> + |1...1>) / sqrt(2)"""
    psi = np.zeros(2**n_qubits)
    psi[0] = psi[-1] = 1
    return qstab.pure_state(psi)


@export
def bell2q_system(**changes) -> "qstab.SystemSpec":
    """Two qubits with independent sigma_y drives, measured through the collective sigma_z.

    There is no free Hamiltonian.

    """
    spec = qstab.SystemSpec(
        h0=np.zeros((4, 4), dtype=np.complex128),
        controls=[
            qstab.kron(SIGMA_Y, IDENTITY2),
            qstab.kron(IDENTITY2, SIGMA_Y),
        ],
        observable=qstab.kron(SIGMA_Z, IDENTITY2) + qstab.kron(IDENTITY2, SIGMA_Z),
        dt=0.001,
        name="bell2q",
    )
    return spec.replace(**changes) if changes else spec


@export
def ghz3q_system(**changes) -> "qstab.SystemSpec":
    """Three qubits measured through weighted sigma_z sigma_z correlations."""
    zz = qstab.kron(SIGMA_Z, SIGMA_Z)
    xx = qstab.kron(SIGMA_X, SIGMA_X)
    spec = qstab.SystemSpec(
        h0=np.diag([1, -1, -1, 1, 1, -1, -1, 1]).astype(np.complex128),
        controls=[
            qstab.kron_all(IDENTITY2, IDENTITY2, SIGMA_X) + qstab.kron(xx, IDENTITY2),
            qstab.kron_all(SIGMA_X, IDENTITY2, IDENTITY2) + qstab.kron(IDENTITY2, xx),
        ],
        observable=2 * qstab.kron(zz, IDENTITY2) + qstab.kron(IDENTITY2, zz),
        dt=0.001,
        name="ghz3q",
    )
    return spec.replace(**changes) if changes else spec


SYSTEMS = immutabledict(
    bell2q=dict(
        build=bell2q_system,
        target="bell",
        max_time=20.0,
        description="Two-qubit symmetric Bell state under sigma_y drives",
        initial_states=("mixed",),
    ),
    ghz3q=dict(
        build=ghz3q_system,
        target="ghz",
        max_time=40.0,
        description="Three-qubit GHZ state under correlated sigma_x drives",
        initial_states=("rho01", "rho02", "mixed"),
    ),
)

# Named states; a callable takes the Hilbert dimension
NAMED_STATES = immutabledict(
    bell=lambda dim: bell_state(),
    ghz=lambda dim: ghz_state(int(np.log2(dim))),
    rho01=lambda dim: qstab.basis_state(dim, 1),
    rho02=lambda dim: qstab.basis_state(dim, 0),
    mixed=qstab.maximally_mixed,
)


@export
def list_systems() -> ty.List[str]:
    return sorted(SYSTEMS)


@export
def get_system(name: str, **changes) -> SystemCatalogEntry:
    """Catalog entry for name; changes (e.g. eta_c=0.8) are applied to the SystemSpec."""
    if name not in SYSTEMS:
        raise qstab.InvalidConfiguration(
            f"Unknown system {name!r}, choose from {', '.join(list_systems())}"
        )
    entry = SYSTEMS[name]
    system = entry["build"](**changes)
    return SystemCatalogEntry(
        name=name,
        description=entry["description"],
        system=system,
        target=get_state(entry["target"], system.dim),
        max_time=entry["max_time"],
        initial_states=entry["initial_states"],
    )


@export
def get_state(name: str, dim: int) -> np.ndarray:
    """Named state of dimension dim, e.g. get_state("rho01", 8)."""
    if name not in NAMED_STATES:
        raise qstab.InvalidConfiguration(
            f"Unknown state {name!r}, choose from {', '.join(sorted(NAMED_STATES))}"
        )
    state = NAMED_STATES[name](dim)
    if state.shape != (dim, dim):
        raise qstab.DimensionMismatch(f"State {name} has shape {state.shape}, need ({dim}, {dim})")
    return state


@export
def resolve_state(spec, dim: int) -> np.ndarray:
    """A state given by name, by a {"real", "imag"} document or as a nested list."""
    if isinstance(spec, str):
        return get_state(spec, dim)
    rho = qstab.as_matrix(qstab.matrix_from_json(spec))
    if rho.shape != (dim, dim):
        raise qstab.DimensionMismatch(f"State has shape {rho.shape}, need ({dim}, {dim})")
    return rho
