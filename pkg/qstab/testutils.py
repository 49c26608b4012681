"""Utilities to help write qstab tests.

Not needed during qstab operation, so this file is not imported in __init__.py

"""

import numpy as np
from hypothesis import strategies

import qstab

seeds = strategies.integers(min_value=0, max_value=2**32 - 1)


def random_complex(dim, rng, shape=None):
    shape = (dim, dim) if shape is None else shape
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_hermitian(dim, rng, scale=1.0):
    a = random_complex(dim, rng)
    return scale * (a + a.conj().T) / 2


def random_density_matrix(dim, rng, rank=None):
    """Full rank (or the given rank) density matrix from a Ginibre ensemble."""
    rank = dim if rank is None else rank
    g = random_complex(dim, rng, shape=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_unitary(dim, rng):
    q, r = np.linalg.qr(random_complex(dim, rng))
    return q * (np.diag(r) / np.abs(np.diag(r)))


@strategies.composite
def density_matrices(draw, dims=(2, 4, 8), pure=False):
    dim = draw(strategies.sampled_from(dims))
    rng = np.random.default_rng(draw(seeds))
    if pure:
        return qstab.sample_haar_pure(dim, rng)
    rank = draw(strategies.integers(min_value=1, max_value=dim))
    return random_density_matrix(dim, rng, rank)


@strategies.composite
def hermitian_matrices(draw, dims=(2, 3, 4, 8), scale=1.0):
    dim = draw(strategies.sampled_from(dims))
    return random_hermitian(dim, np.random.default_rng(draw(seeds)), scale)


def shipped_systems():
    """(system, target) of every catalog system."""
    return [(e.system, e.target) for e in (qstab.get_system(n) for n in qstab.list_systems())]


def central_differences(f, arrays, indices, h=1e-5):
    """d f / d arrays[a][i] by central differences, for (a, flat index i) in indices.

    Arrays are perturbed in place and restored.
    """
    result = []
    for a, i in indices:
        arr = arrays[a]
        idx = np.unravel_index(i, arr.shape)
        old = arr[idx]
        arr[idx] = old + h
        up = f()
        arr[idx] = old - h
        down = f()
        arr[idx] = old
        result.append((up - down) / (2 * h))
    return np.array(result)


def relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


class LineWorld:
    """A one-dimensional deterministic toy problem with the environment interface.

    The state x starts uniform in [-1, 1]; each step moves it by step_size * clip(a, -1, 1) and
    gives reward -x^2. Episodes last n_steps steps.
    """

    observation_size = 1
    action_size = 1

    def __init__(self, n_steps=10, step_size=0.2):
        self.n_steps = n_steps
        self.step_size = step_size
        self.x = 0.0
        self.t = 0

    def reset(self, seed=None, initial_state=None):
        rng = np.random.default_rng(seed)
        self.x = float(rng.uniform(-1, 1)) if initial_state is None else float(initial_state)
        self.t = 0
        return np.array([self.x])

    def step(self, action):
        obs = np.array([self.x])
        a = float(np.clip(np.asarray(action).ravel()[0], -1, 1))
        self.x += self.step_size * a
        self.t += 1
        done = self.t >= self.n_steps
        return qstab.Transition(
            obs=obs,
            action=np.array([a]),
            reward=-self.x**2,
            next_obs=np.array([self.x]),
            done=done,
            termination_reason="timeout" if done else None,
            step_index=self.t,
            distance=abs(self.x),
        )


def line_world_factory(reward_spec=None, index=0):
    return LineWorld()
