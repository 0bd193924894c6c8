import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hmdlf.tensor import (Rng, ShapeError, add_bias, elementwise, fd_gradient, glorot_limit, init_uniform, matmul,
                          relative_error, sigmoid, softmax)

finite = st.floats(-50, 50, allow_nan=False)


def test_matmul_identity():
    X = np.array([[1.5, -2.0], [0.25, 4.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), X), X)


def test_matmul_hand_case():
    np.testing.assert_array_equal(matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0], [6.0]])),
                                  [[17.0], [39.0]])


def test_matmul_shape_error():
    with pytest.raises(ShapeError, match="inner extents"):
        matmul(np.zeros((1, 3)), np.zeros((2, 2)))


def test_matmul_associative():
    g = np.random.default_rng(3)
    for _ in range(20):
        a, b, c = (g.normal(size=(3, 3)) for _ in range(3))
        np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-10)


def test_elementwise_fixed_points():
    assert elementwise("tanh", np.array(0.0)) == 0.0
    assert elementwise("sigmoid", np.array(0.0)) == 0.5
    assert elementwise("relu", np.array(-3.0)) == 0.0


def test_sigmoid_saturates_without_nan():
    with np.errstate(over="raise", invalid="raise"):
        out = sigmoid(np.array([1e4, 800.0, -800.0, -1e4]))
    assert np.all(np.isfinite(out))
    assert out[0] == 1.0 and out[-1] == 0.0


def test_elementwise_add_and_mismatch():
    np.testing.assert_array_equal(elementwise("add", np.array([1.0, 2.0]), np.array([3.0, 4.0])), [4.0, 6.0])
    with pytest.raises(ShapeError):
        elementwise("mul", np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        elementwise("pow", np.zeros(2))


def test_bias_add_is_the_only_broadcast():
    np.testing.assert_array_equal(add_bias(np.zeros((2, 3)), np.array([1.0, 2.0, 3.0])), [[1, 2, 3], [1, 2, 3]])
    with pytest.raises(ShapeError):
        add_bias(np.zeros((2, 3)), np.zeros(2))


@pytest.mark.parametrize("c", [-1e6, -3.0, 0.0, 7.5, 1e6])
def test_softmax_uniform(c):
    np.testing.assert_allclose(softmax(np.full(4, c)), 0.25, atol=1e-15)


def test_softmax_hand_case():
    np.testing.assert_allclose(softmax(np.array([0.0, np.log(3.0)])), [0.25, 0.75], atol=1e-15)


def test_softmax_stable():
    out = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_empty():
    with pytest.raises(ShapeError):
        softmax(np.array([]))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=finite), finite)
def test_softmax_properties(v, shift):
    p = softmax(v)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(softmax(v + shift), p, atol=1e-12)


def test_fd_gradient_cases():
    np.testing.assert_allclose(fd_gradient(lambda x: float(np.sum(x**2)), np.array([1.0, 2.0]), 1e-5),
                               [2.0, 4.0], atol=1e-6)
    np.testing.assert_array_equal(fd_gradient(lambda x: 3.0, np.array([1.0, -2.0, 5.0])), 0.0)
    np.testing.assert_allclose(fd_gradient(lambda x: float(x[0] * x[1]), np.array([3.0, 5.0]), 1e-5),
                               [5.0, 3.0], atol=1e-6)


def test_fd_gradient_restores_input():
    x = np.array([0.1, 0.2, 0.3])
    fd_gradient(lambda v: float(np.sum(np.sin(v))), x)
    np.testing.assert_array_equal(x, [0.1, 0.2, 0.3])


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-12])) == pytest.approx(1e-4)
    assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)


def test_init_uniform_range_and_determinism():
    limit = glorot_limit(30, 20)
    a = init_uniform((30, 20), fan_in=30, rng=Rng(5))
    assert np.all(np.abs(a) <= limit)
    np.testing.assert_array_equal(a, init_uniform((30, 20), fan_in=30, rng=Rng(5)))


def test_init_uniform_pinned_draws():
    # first draws of the Philox stream for seeds 1 and 2, limit sqrt(6/4)
    np.testing.assert_array_equal(init_uniform((2, 2), 2, Rng(1)),
                                  [[-0.48115808512033187, 0.8541585055740573],
                                   [-0.8422943340823734, -1.148549973137313]])
    np.testing.assert_array_equal(init_uniform((2, 2), 2, Rng(2)),
                                  [[-0.02715135853126971, -0.4311715345059417],
                                   [0.8849518002977352, 0.16192229731116892]])


def test_init_uniform_empty_and_bad_fan_in():
    assert init_uniform((0, 4), 3, Rng(0)).shape == (0, 4)
    with pytest.raises(ValueError):
        init_uniform((2, 2), 0, Rng(0))


def test_rng_spawn_is_deterministic_and_distinct():
    a, b = Rng(9), Rng(9)
    ca, cb = a.spawn(), b.spawn()
    assert ca.seed == cb.seed
    assert a.spawn().seed != ca.seed
    with pytest.raises(ValueError):
        Rng(-1)
