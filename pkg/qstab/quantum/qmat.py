"""Dense complex linear algebra for small Hilbert spaces.

Matrices are plain complex128 numpy arrays. The inner loops (superoperators, the Hermitian
eigensolver and the nearest-density-matrix repair) are numba kernels that release the GIL, so any
number of worker threads can call them at once.

"""

import typing as ty

import numba
import numpy as np

import qstab

export, __all__ = qstab.exporter()
__all__.extend(["TOLERANCES", "IDENTITY2", "SIGMA_X", "SIGMA_Y", "SIGMA_Z"])


@export
class Tolerances(ty.NamedTuple):
    """Numerical tolerances used throughout qstab."""

    hermitian: float = 1e-10
    trace: float = 1e-10
    psd: float = 1e-10
    superoperator: float = 1e-12
    # Repair counts as a change only above this per-eigenvalue shift
    eigenvalue_change: float = 1e-12
    purity: float = 1e-9
    distance_clamp: float = 1e-9
    eig_input_hermitian: float = 1e-8
    # Jacobi stops once the off-diagonal Frobenius norm is below this fraction of the total
    jacobi_relative: float = 1e-13
    jacobi_max_sweeps: int = 100
    divergence_trace: float = 0.5


TOLERANCES = Tolerances()

IDENTITY2 = np.eye(2, dtype=np.complex128)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)


@export
class DimensionMismatch(ValueError):
    pass


@export
class NotHermitian(ValueError):
    pass


@export
class NotPhysical(ValueError):
    pass


@export
class EigenNotConverged(RuntimeError):
    pass


@export
class TrajectoryDiverged(RuntimeError):
    pass


@export
class SpectralDecomposition(ty.NamedTuple):
    # Descending
    eigenvalues: np.ndarray
    # Column k belongs to eigenvalues[k]
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


##
# Validation
##


@export
def as_matrix(a, name="matrix") -> np.ndarray:
    """Return a as a C-contiguous complex128 square matrix."""
    a = np.ascontiguousarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or not a.shape[0]:
        raise DimensionMismatch(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    return a


def _same_dimension(*pairs):
    """Convert (name, matrix) pairs with as_matrix and check they share one dimension."""
    result = [as_matrix(m, name) for name, m in pairs]
    dims = {m.shape[0] for m in result}
    if len(dims) > 1:
        shapes = ", ".join(f"{name}: {m.shape}" for (name, _), m in zip(pairs, result))
        raise DimensionMismatch(f"Matrices have different dimensions ({shapes})")
    return result


@export
def hermiticity_error(a) -> float:
    a = as_matrix(a)
    return float(np.max(np.abs(a - a.conj().T)))


@export
def check_hermitian(a, name="matrix", tolerance=TOLERANCES.hermitian) -> np.ndarray:
    a = as_matrix(a, name)
    error = hermiticity_error(a)
    if error > tolerance:
        raise NotHermitian(f"{name} is not Hermitian (max |a - a^H| = {error:.3g})")
    return a


@export
def is_density_matrix(rho, tolerances=TOLERANCES) -> bool:
    rho = as_matrix(rho)
    if hermiticity_error(rho) > tolerances.hermitian:
        return False
    if abs(np.trace(rho) - 1) > tolerances.trace:
        return False
    return bool(eig_hermitian(rho).eigenvalues[-1] >= -tolerances.psd)


@export
def check_density_matrix(rho, name="state", tolerances=TOLERANCES) -> np.ndarray:
    rho = check_hermitian(rho, name, tolerances.hermitian)
    trace = np.trace(rho)
    if abs(trace - 1) > tolerances.trace:
        raise NotPhysical(f"{name} has trace {trace:.12g}, expected 1")
    smallest = eig_hermitian(rho).eigenvalues[-1]
    if smallest < -tolerances.psd:
        raise NotPhysical(f"{name} is not positive semidefinite (eigenvalue {smallest:.3g})")
    return rho


@export
def purity(rho) -> float:
    """Tr(rho^2)"""
    rho = as_matrix(rho)
    return float(np.real(np.sum(rho * rho.T)))


@export
def check_pure_target(rho_d, name="target", tolerances=TOLERANCES) -> np.ndarray:
    """Validate a stabilization target: physical and pure."""
    rho_d = check_density_matrix(rho_d, name, tolerances)
    p = purity(rho_d)
    if abs(p - 1) > tolerances.purity:
        raise NotPhysical(f"{name} must be a pure state, has purity {p:.12g}")
    return rho_d


##
# Construction
##


@export
def kron(a, b) -> np.ndarray:
    """Kronecker product, a is the slow index."""
    return np.kron(as_matrix(a, "a"), as_matrix(b, "b"))


@export
def kron_all(*operators) -> np.ndarray:
    result = as_matrix(operators[0])
    for op in operators[1:]:
        result = kron(result, op)
    return result


@export
def pure_state(vector) -> np.ndarray:
    """|psi><psi| for the normalized vector."""
    psi = np.asarray(vector, dtype=np.complex128).ravel()
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise NotPhysical("Cannot build a state from the zero vector")
    psi = psi / norm
    return np.ascontiguousarray(np.outer(psi, psi.conj()))


@export
def basis_state(dim: int, index: int) -> np.ndarray:
    rho = np.zeros((dim, dim), dtype=np.complex128)
    rho[index, index] = 1
    return rho


@export
def maximally_mixed(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=np.complex128) / dim


##
# Superoperators
##


@numba.njit(nogil=True, cache=True)
def _adjoint(a):
    return np.ascontiguousarray(np.conj(a).T)


@numba.njit(nogil=True, cache=True)
def _commutator(a, b):
    return a @ b - b @ a


@numba.njit(nogil=True, cache=True)
def _dissipator(c, rho):
    cd = _adjoint(c)
    cdc = cd @ c
    return c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)


@numba.njit(nogil=True, cache=True)
def _expectation(a, rho):
    """Re Tr(a rho)"""
    result = 0.0
    n = rho.shape[0]
    for i in range(n):
        for j in range(n):
            result += (a[i, j] * rho[j, i]).real
    return result


@numba.njit(nogil=True, cache=True)
def _innovation(c, rho):
    cd = _adjoint(c)
    mean = _expectation(c + cd, rho)
    return c @ rho + rho @ cd - mean * rho


@numba.njit(nogil=True, cache=True)
def _distance(rho_d, rho):
    return 1.0 - _expectation(rho_d, rho)


@export
def commutator(a, b) -> np.ndarray:
    a, b = _same_dimension(("a", a), ("b", b))
    return _commutator(a, b)


@export
def expectation(a, rho) -> float:
    """Re Tr(a rho)"""
    a, rho = _same_dimension(("operator", a), ("rho", rho))
    return _expectation(a, rho)


@export
def dissipator(c, rho) -> np.ndarray:
    """Measurement back-action c rho c^H - (c^H c rho + rho c^H c) / 2."""
    c, rho = _same_dimension(("c", c), ("rho", rho))
    return _dissipator(c, rho)


@export
def innovation(c, rho) -> np.ndarray:
    """Information gain c rho + rho c^H - Tr[(c + c^H) rho] rho."""
    c, rho = _same_dimension(("c", c), ("rho", rho))
    return _innovation(c, rho)


@export
def trace_distance_to_target(rho_d, rho, tolerances=TOLERANCES) -> float:
    """Distance 1 - Re Tr(rho_d rho) of rho to the pure target rho_d, in [0, 1].

    Purity of rho_d is checked when a target is configured, not here.

    """
    rho_d, rho = _same_dimension(("rho_d", rho_d), ("rho", rho))
    return clamp_distance(_distance(rho_d, rho), tolerances)


@export
def clamp_distance(distance: float, tolerances=TOLERANCES) -> float:
    slack = tolerances.distance_clamp
    if not -slack <= distance <= 1 + slack:
        raise NotPhysical(f"Distance {distance} is outside [0, 1]; is the state physical?")
    return min(max(float(distance), 0.0), 1.0)


##
# Eigensolver and repair
##


@numba.njit(nogil=True, cache=True)
def _jacobi_eigh(h, relative_tolerance, max_sweeps):
    """Cyclic complex Jacobi rotations on a Hermitian matrix.

    Returns (eigenvalues descending, eigenvectors as columns, converged).

    """
    n = h.shape[0]
    a = h.copy()
    v = np.zeros((n, n), dtype=np.complex128)
    for i in range(n):
        v[i, i] = 1.0

    norm2 = 0.0
    for i in range(n):
        for j in range(n):
            norm2 += abs(a[i, j]) ** 2
    threshold = relative_tolerance**2 * norm2

    converged = False
    for sweep in range(max_sweeps + 1):
        off2 = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off2 += abs(a[i, j]) ** 2
        if off2 <= threshold:
            converged = True
            break
        if sweep == max_sweeps:
            break

        for p in range(n - 1):
            for q in range(p + 1, n):
                b = a[p, q]
                abs_b = abs(b)
                if abs_b == 0.0:
                    continue
                # Phase-rotate q so the pivot is real, then a real Jacobi rotation zeroes it
                phase = b / abs_b
                conj_phase = np.conj(phase)
                theta = (a[q, q].real - a[p, p].real) / (2.0 * abs_b)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0:
                    t = -t
                cos = 1.0 / np.sqrt(t * t + 1.0)
                sin = t * cos

                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = cos * akp - sin * conj_phase * akq
                    a[k, q] = sin * akp + cos * conj_phase * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = cos * apk - sin * phase * aqk
                    a[q, k] = sin * apk + cos * phase * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real

                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = cos * vkp - sin * conj_phase * vkq
                    v[k, q] = sin * vkp + cos * conj_phase * vkq

    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i].real
    order = np.argsort(-w)
    w_sorted = np.empty(n)
    v_sorted = np.empty((n, n), dtype=np.complex128)
    for j in range(n):
        w_sorted[j] = w[order[j]]
        for k in range(n):
            v_sorted[k, j] = v[k, order[j]]
    return w_sorted, v_sorted, converged


@numba.njit(nogil=True, cache=True)
def _simplex_projection(w):
    """Euclidean projection of descending-sorted w onto the probability simplex."""
    n = len(w)
    cumulative = 0.0
    shift = 0.0
    for j in range(n):
        cumulative += w[j]
        candidate = (cumulative - 1.0) / (j + 1)
        if w[j] - candidate > 0:
            shift = candidate
    result = np.empty(n)
    for j in range(n):
        result[j] = max(w[j] - shift, 0.0)
    return result


@export
def simplex_projection(eigenvalues) -> np.ndarray:
    """Closest probability vector to eigenvalues, in descending order."""
    w = np.sort(np.asarray(eigenvalues, dtype=np.float64))[::-1].copy()
    return _simplex_projection(w)


@numba.njit(nogil=True, cache=True)
def _repair(a, eigenvalue_change, divergence_trace, relative_tolerance, max_sweeps):
    """Nearest density matrix to a in the 2-norm.

    Returns (rho, changed, status) where status is 0 (ok), 1 (diverged: non-finite entries or
    trace off by more than divergence_trace) or 2 (eigensolver did not converge).

    """
    n = a.shape[0]
    h = 0.5 * (a + _adjoint(a))
    trace = 0.0
    for i in range(n):
        for j in range(n):
            if not (np.isfinite(h[i, j].real) and np.isfinite(h[i, j].imag)):
                return h, False, 1
        trace += h[i, i].real
    if abs(trace - 1.0) > divergence_trace:
        return h, False, 1

    w, v, converged = _jacobi_eigh(h, relative_tolerance, max_sweeps)
    if not converged:
        return h, False, 2

    w_new = _simplex_projection(w)
    largest_change = 0.0
    for i in range(n):
        largest_change = max(largest_change, abs(w_new[i] - w[i]))
    if largest_change <= eigenvalue_change:
        return h / trace, False, 0

    rho = (v * w_new) @ _adjoint(v)
    return 0.5 * (rho + _adjoint(rho)), True, 0


@export
def repair_density_matrix(a, tolerances=TOLERANCES) -> ty.Tuple[np.ndarray, bool]:
    """Return (nearest physical state, whether any eigenvalue moved).

    An input that is already physical comes back unchanged up to symmetrization and trace
    normalization.

    """
    a = as_matrix(a)
    rho, changed, status = _repair(
        a,
        tolerances.eigenvalue_change,
        tolerances.divergence_trace,
        tolerances.jacobi_relative,
        tolerances.jacobi_max_sweeps,
    )
    _raise_for_status(status, a, tolerances)
    return rho, bool(changed)


@export
def project_to_physical(a, tolerances=TOLERANCES) -> np.ndarray:
    """Closest unit-trace positive semidefinite matrix to (a + a^H) / 2."""
    return repair_density_matrix(a, tolerances)[0]


def _raise_for_status(status, a, tolerances=TOLERANCES):
    if status == 1:
        raise TrajectoryDiverged(
            f"State diverged (trace {np.trace(a).real:.6g}, finite: {np.all(np.isfinite(a))})"
        )
    if status == 2:
        raise EigenNotConverged(
            f"Jacobi eigensolver did not converge in {tolerances.jacobi_max_sweeps} sweeps"
        )


@export
def eig_hermitian(a, tolerances=TOLERANCES) -> SpectralDecomposition:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues descending."""
    a = check_hermitian(a, tolerance=tolerances.eig_input_hermitian)
    h = np.ascontiguousarray(0.5 * (a + a.conj().T))
    w, v, converged = _jacobi_eigh(h, tolerances.jacobi_relative, tolerances.jacobi_max_sweeps)
    if not converged:
        raise EigenNotConverged(
            f"Jacobi eigensolver did not converge in {tolerances.jacobi_max_sweeps} sweeps"
        )
    return SpectralDecomposition(eigenvalues=w, eigenvectors=v)
