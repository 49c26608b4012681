"""Fully connected tanh networks with hand-written backpropagation, and the Adam optimizer."""

import typing as ty

import numpy as np

import qstab

export, __all__ = qstab.exporter()


@export
class MlpParams:
    """Weights (n_in, n_out) and biases (n_out,) per layer.

    Hidden layers use tanh, the output layer is linear.
    """

    __slots__ = ("weights", "biases")

    def __init__(self, weights: ty.Sequence[np.ndarray], biases: ty.Sequence[np.ndarray]):
        if len(weights) != len(biases) or not len(weights):
            raise ValueError("Need one bias per weight matrix and at least one layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"Layer {i} has inconsistent shapes {w.shape} and {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"Layer {i} does not connect to layer {i - 1}")

    @property
    def sizes(self) -> ty.Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> ty.List[np.ndarray]:
        """[W0, b0, W1, b1, ...], the arrays themselves (not copies)."""
        result = []
        for w, b in zip(self.weights, self.biases):
            result += [w, b]
        return result

    @classmethod
    def from_parameters(cls, arrays: ty.Sequence[np.ndarray]) -> "MlpParams":
        return cls(arrays[0::2], arrays[1::2])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases]
        )

    def to_dict(self) -> dict:
        return dict(
            weights=[w.tolist() for w in self.weights], biases=[b.tolist() for b in self.biases]
        )

    @classmethod
    def from_dict(cls, d: ty.Mapping) -> "MlpParams":
        return cls(d["weights"], d["biases"])


def _orthogonal(n_in, n_out, gain, rng):
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    # Sign fix makes q uniformly distributed
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:n_in, :n_out])


@export
def init_mlp(
    sizes: ty.Sequence[int], seed=None, output_gain=1.0, hidden_gain=np.sqrt(2)
) -> MlpParams:
    """Orthogonal initialization, zero biases.

    :param sizes: (n_inputs, hidden..., n_outputs)
    :param seed: integer seed or numpy Generator
    :param output_gain: scale of the output layer, small (0.01) for policy heads
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = output_gain if i == len(sizes) - 2 else hidden_gain
        weights.append(_orthogonal(n_in, n_out, gain, rng))
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases)


@export
def mlp_forward(params: MlpParams, x) -> ty.Tuple[np.ndarray, ty.List[np.ndarray]]:
    """Return (output, cache) for a batch x of shape (n, n_inputs) or a single input.

    The cache holds the input of every layer and is what mlp_backward needs.

    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis]
    if x.shape[1] != params.n_inputs:
        raise qstab.DimensionMismatch(
            f"Network takes {params.n_inputs} inputs, got {x.shape[1]}"
        )
    cache = [x]
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        a = z if i == last else np.tanh(z)
        if i != last:
            cache.append(a)
    return (a[0] if single else a), cache


@export
def mlp_backward(params: MlpParams, cache: ty.List[np.ndarray], grad_output) -> MlpParams:
    """Gradients of a scalar loss w.r.t. all parameters, given d loss / d output."""
    delta = np.asarray(grad_output, dtype=np.float64)
    if delta.ndim == 1:
        delta = delta[np.newaxis]
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.weights)
    for i in reversed(range(len(params.weights))):
        a_in = cache[i]
        grad_w[i] = a_in.T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i:
            # a_in = tanh(z) for every layer but the first
            delta = (delta @ params.weights[i].T) * (1.0 - a_in**2)
    return MlpParams(grad_w, grad_b)


@export
def global_norm(arrays: ty.Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(np.sum(a**2) for a in arrays)))


@export
def clip_grad_norm(grads: ty.Sequence[np.ndarray], max_norm: float) -> float:
    """Scale grads in place so their global norm is at most max_norm; return the original norm."""
    norm = global_norm(grads)
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


@export
class Adam:
    """Adam over a fixed list of parameter arrays, updated in place."""

    def __init__(
        self, parameters: ty.Sequence[np.ndarray], learning_rate=3e-4, betas=(0.9, 0.999), eps=1e-8
    ):
        self.parameters = list(parameters)
        self.learning_rate = learning_rate
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.parameters]
        self.v = [np.zeros_like(p) for p in self.parameters]
        self.t = 0

    def step(self, grads: ty.Sequence[np.ndarray], learning_rate=None):
        if len(grads) != len(self.parameters):
            raise ValueError(f"Expected {len(self.parameters)} gradients, got {len(grads)}")
        lr = self.learning_rate if learning_rate is None else learning_rate
        self.t += 1
        correction1 = 1 - self.beta1**self.t
        correction2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(self.parameters, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g**2
            p -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def state_dict(self) -> dict:
        return dict(t=self.t, m=[a.tolist() for a in self.m], v=[a.tolist() for a in self.v])

    def load_state_dict(self, d: ty.Mapping):
        self.t = int(d["t"])
        self.m = [_like(a, p) for a, p in zip(d["m"], self.parameters)]
        self.v = [_like(a, p) for a, p in zip(d["v"], self.parameters)]


def _like(values, parameter):
    return np.asarray(values, dtype=np.float64).reshape(parameter.shape)
