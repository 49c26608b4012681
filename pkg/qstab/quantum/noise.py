"""Counter-based Gaussian noise.

Variate k of a stream is a pure function of (seed, k). Variates come in blocks of BLOCK_SIZE;
block b is drawn from a numpy Philox generator keyed by the seed, with its counter started at
b * 2**64 so blocks never overlap. Trajectories can be replayed or run on any worker and still
see bit-identical Wiener increments.

"""

import numpy as np

import qstab

export, __all__ = qstab.exporter()

_MASK64 = 2**64 - 1
BLOCK_SIZE = 1024
__all__.append("BLOCK_SIZE")


def _block(seed: int, index: int) -> np.ndarray:
    bit_generator = np.random.Philox(key=seed & _MASK64, counter=index << 64)
    return np.random.Generator(bit_generator).standard_normal(BLOCK_SIZE)


@export
def counter_normals(seed: int, first_counter: int, n: int) -> np.ndarray:
    """Standard normal variates first_counter ... first_counter + n - 1 of the stream `seed`."""
    if first_counter < 0 or n < 0:
        raise ValueError(f"Need first_counter >= 0 and n >= 0, got {first_counter}, {n}")
    if n == 0:
        return np.empty(0)
    first_block, offset = divmod(first_counter, BLOCK_SIZE)
    last_block = (first_counter + n - 1) // BLOCK_SIZE
    values = np.concatenate([_block(seed, b) for b in range(first_block, last_block + 1)])
    return values[offset : offset + n]


@export
def counter_normal(seed: int, counter: int) -> float:
    """Standard normal variate number `counter` of the stream `seed`."""
    return float(counter_normals(seed, counter, 1)[0])


@export
class NoiseStream:
    """Wiener increments for one trajectory: a 64-bit seed and a step counter.

    The same seed always gives the same sequence.
    """

    __slots__ = ("seed", "counter", "_block_index", "_block")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        if counter < 0:
            raise ValueError(f"Counter must be >= 0, got {counter}")
        self.counter = int(counter)
        self._block_index = -1
        self._block = None

    def standard_normal(self) -> float:
        index, offset = divmod(self.counter, BLOCK_SIZE)
        if index != self._block_index:
            self._block = _block(self.seed, index)
            self._block_index = index
        self.counter += 1
        return float(self._block[offset])

    def standard_normals(self, n: int) -> np.ndarray:
        result = counter_normals(self.seed, self.counter, n)
        self.counter += n
        return result

    def copy(self) -> "NoiseStream":
        return NoiseStream(self.seed, self.counter)

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, counter={self.counter})"


@export
def draw_dw(noise: NoiseStream, dt: float) -> float:
    """Wiener increment ~ Normal(0, dt); advances the stream by one."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return np.sqrt(dt) * noise.standard_normal()
