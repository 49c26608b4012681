import numpy as np
import pytest
from hypothesis import given, settings

import qstab
from qstab.testutils import central_differences, seeds


def test_init_shapes():
    params = qstab.init_mlp((32, 128, 128, 2), seed=0, output_gain=0.01)
    assert params.sizes == (32, 128, 128, 2)
    assert [w.shape for w in params.weights] == [(32, 128), (128, 128), (128, 2)]
    assert all(np.all(b == 0) for b in params.biases)

    w = params.weights[0]
    np.testing.assert_allclose(w @ w.T, 2 * np.eye(32), atol=1e-10)
    w = params.weights[1]
    np.testing.assert_allclose(w.T @ w, 2 * np.eye(128), atol=1e-10)
    w = params.weights[2]
    np.testing.assert_allclose(w.T @ w, 1e-4 * np.eye(2), atol=1e-14)


def test_init_reproducible():
    a = qstab.init_mlp((4, 8, 1), seed=3)
    b = qstab.init_mlp((4, 8, 1), seed=3)
    for x, y in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(x, y)
    c = qstab.init_mlp((4, 8, 1), seed=4)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_init_weights_contiguous():
    # Wide first layers come out of a transposed QR factor
    params = qstab.init_mlp((3, 16, 16, 2), seed=1)
    assert all(w.flags.c_contiguous for w in params.weights)


def test_central_differences_on_views():
    w = np.arange(6.0).reshape(2, 3).T
    assert not w.flags.c_contiguous
    coefficients = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])

    def f():
        return np.sum(coefficients * w**2)

    numeric = central_differences(f, [w], [(0, i) for i in range(6)])
    np.testing.assert_allclose(numeric, (2 * coefficients * w).ravel(), rtol=1e-8)
    np.testing.assert_array_equal(w, np.arange(6.0).reshape(2, 3).T)


def test_forward():
    params = qstab.MlpParams(
        weights=[np.array([[1.0, -1.0]]), np.array([[2.0], [3.0]])],
        biases=[np.array([0.0, 0.5]), np.array([1.0])],
    )
    out, cache = qstab.mlp_forward(params, np.array([0.5]))
    expected = 2 * np.tanh(0.5) + 3 * np.tanh(0.0) + 1
    assert out == pytest.approx([expected])
    assert len(cache) == 2

    batch, _ = qstab.mlp_forward(params, np.array([[0.5], [0.5]]))
    assert batch.shape == (2, 1)
    with pytest.raises(qstab.DimensionMismatch):
        qstab.mlp_forward(params, np.zeros(3))
    with pytest.raises(ValueError):
        qstab.MlpParams([np.zeros((2, 3))], [np.zeros(2)])


@settings(deadline=None, max_examples=20)
@given(seeds)
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params = qstab.init_mlp((5, 7, 6, 3), seed=rng, output_gain=1.0)
    for b in params.biases:
        b += rng.normal(scale=0.1, size=b.shape)
    x = rng.normal(size=(4, 5))
    upstream = rng.normal(size=(4, 3))

    def loss():
        return np.sum(qstab.mlp_forward(params, x)[0] * upstream)

    _, cache = qstab.mlp_forward(params, x)
    grads = qstab.mlp_backward(params, cache, upstream).parameters()
    arrays = params.parameters()
    indices = [(a, int(rng.integers(arrays[a].size))) for a in range(len(arrays)) for _ in range(3)]
    numeric = central_differences(loss, arrays, indices, h=1e-5)
    analytic = np.array([grads[a].ravel()[i] for a, i in indices])
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_clip_grad_norm():
    grads = [np.array([3.0]), np.array([[4.0]])]
    assert qstab.clip_grad_norm(grads, 1.0) == pytest.approx(5)
    assert qstab.global_norm(grads) == pytest.approx(1)
    grads = [np.array([0.3, 0.4])]
    assert qstab.clip_grad_norm(grads, 1.0) == pytest.approx(0.5)
    np.testing.assert_array_equal(grads[0], [0.3, 0.4])


def test_adam_first_step():
    p = np.array([1.0, -2.0, 0.5])
    adam = qstab.Adam([p], learning_rate=0.1)
    adam.step([np.array([2.0, -0.5, 0.0])])
    # The first bias-corrected step is lr * sign(g)
    np.testing.assert_allclose(p, [0.9, -1.9, 0.5], atol=1e-7)
    assert adam.t == 1
    with pytest.raises(ValueError):
        adam.step([])


def test_adam_minimizes_quadratic():
    p = np.array([3.0, -4.0])
    adam = qstab.Adam([p], learning_rate=0.05)
    for _ in range(2000):
        adam.step([2 * p])
    np.testing.assert_allclose(p, 0, atol=0.1)

    restored = qstab.Adam([p.copy()], learning_rate=0.05)
    restored.load_state_dict(adam.state_dict())
    assert restored.t == 2000
    np.testing.assert_array_equal(restored.m[0], adam.m[0])


def test_serialization():
    params = qstab.init_mlp((3, 4, 2), seed=1)
    again = qstab.MlpParams.from_dict(params.to_dict())
    for a, b in zip(params.parameters(), again.parameters()):
        np.testing.assert_array_equal(a, b)
    assert params.copy().all_finite()
    broken = params.copy()
    broken.weights[0][0, 0] = np.nan
    assert not broken.all_finite()
    assert params.all_finite()
