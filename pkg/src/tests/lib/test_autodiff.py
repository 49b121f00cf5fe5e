import numpy as np
import pytest

import lib.glob as glob
glob.TEST_INSTANCE = True

from lib import autodiff as ad
from lib.autodiff import (
    Adam,
    AdamState,
    ContractViolation,
    DecompositionException,
    OracleFailureException,
    Tensor,
    adam_step,
    backward,
    finite_difference_check,
    no_grad,
    parameter_gradient_check,
)


@pytest.fixture()
def rng():
    return np.random.default_rng(42)


def test_elementwise_gradients(rng):
    def fn(x):
        return ad.sum(ad.exp(x) * ad.sinh(x) + ad.softplus(x) - ad.arcsinh(x) / (1.0 + ad.square(x)))

    assert finite_difference_check(fn, rng.standard_normal((3, 2))) < 1e-6


def test_matmul_and_broadcast_gradients(rng):
    W = rng.standard_normal((4, 3))
    b = rng.standard_normal(3)

    def fn(x):
        return ad.sum(ad.relu(x @ W + b) * 2.0) + ad.mean(ad.reshape(x, (-1,)))

    assert finite_difference_check(fn, rng.standard_normal((5, 4)) + 0.1) < 1e-6


def test_cholesky_gradient(rng):
    weights = rng.standard_normal((3, 3))

    def fn(x):
        A = x @ ad.transpose(x) + 3.0 * np.eye(3)
        return ad.sum(ad.cholesky(A) * weights)

    assert finite_difference_check(fn, rng.standard_normal((3, 3))) < 1e-5


@pytest.mark.parametrize("transpose", [False, True])
def test_solve_triangular_gradients(rng, transpose):
    L = np.tril(rng.standard_normal((3, 3))) + 3.0 * np.eye(3)
    B = rng.standard_normal((3, 2))
    weights = rng.standard_normal((3, 2))

    def wrt_b(b):
        return ad.sum(ad.solve_triangular(L, b, transpose=transpose) * weights)

    def wrt_l(l):
        return ad.sum(ad.solve_triangular(ad.tril(l) + 3.0 * np.eye(3), B, transpose=transpose) * weights)

    assert finite_difference_check(wrt_b, B) < 1e-6
    assert finite_difference_check(wrt_l, L - 3.0 * np.eye(3)) < 1e-5


def test_solve_triangular_values(rng):
    L = np.tril(rng.standard_normal((4, 4))) + 4.0 * np.eye(4)
    b = rng.standard_normal(4)
    np.testing.assert_allclose(L @ ad.solve_triangular(L, b).values, b, atol=1e-12)
    np.testing.assert_allclose(L.T @ ad.solve_triangular(L, b, transpose=True).values, b, atol=1e-12)


def test_logdet(rng):
    X = rng.standard_normal((4, 4))
    A = X @ X.T + np.eye(4)
    logdet = ad.logdet_from_cholesky(ad.cholesky(A)).item()
    assert logdet == pytest.approx(np.linalg.slogdet(A)[1], rel=1e-10)


def test_cholesky_jitter_on_singular_matrix():
    A = np.ones((3, 3))
    L = ad.cholesky(A).values
    np.testing.assert_allclose(L @ L.T, A, atol=1e-5)


def test_cholesky_failures():
    with pytest.raises(DecompositionException):
        ad.cholesky(-np.eye(3))
    with pytest.raises(DecompositionException):
        ad.cholesky(np.array([[1.0, np.nan], [np.nan, 1.0]]))
    with pytest.raises(ContractViolation):
        ad.cholesky(np.ones((2, 3)))


def test_backward_contracts():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractViolation):
        backward(x * 2.0)
    with pytest.raises(ContractViolation):
        (x * 2.0).item()


def test_backward_accumulates_and_zero_for_unused():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    unused = Tensor(np.array([5.0]), requires_grad=True)
    y = ad.sum(x * x)
    grads = backward(y)
    np.testing.assert_allclose(grads[x], [2.0, 4.0])
    np.testing.assert_allclose(grads[unused], [0.0])
    backward(ad.sum(x))
    np.testing.assert_allclose(x.grad, [3.0, 5.0])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = ad.sum(ad.exp(x))
    assert not y.requires_grad
    assert len(backward(y)) == 0


def test_ndarray_on_the_left_defers_to_tensor():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = np.full((2, 2), 3.0) - x
    assert isinstance(y, Tensor)
    np.testing.assert_allclose(backward(ad.sum(y))[x], -np.ones((2, 2)))


def test_values_are_read_only():
    x = Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        x.values[0] = 1.0


def test_adam_converges_on_quadratic():
    x = Tensor(np.zeros(2), requires_grad=True)
    optimizer = Adam({"x": x}, lr=0.05)
    for _ in range(2000):
        loss = ad.sum(ad.square(x - np.array([3.0, -1.0])))
        optimizer.step(backward(loss))
    np.testing.assert_allclose(x.values, [3.0, -1.0], atol=1e-2)


def test_adam_skips_non_finite_gradient():
    x = Tensor(np.ones(2), requires_grad=True)
    state = AdamState(lr=0.1)
    assert not adam_step({"x": x}, {"x": np.array([np.nan, 1.0])}, state)
    np.testing.assert_allclose(x.values, [1.0, 1.0])
    assert state.skipped == 1 and state.step == 0

    assert adam_step({"x": x}, {"x": np.array([1.0, -1.0])}, state)
    # first bias-corrected step moves every coordinate by lr
    np.testing.assert_allclose(x.values, [0.9, 1.1], atol=1e-6)


def test_adam_contracts():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ContractViolation):
        AdamState(lr=-1.0)
    with pytest.raises(ContractViolation):
        adam_step({"x": x}, {"x": np.ones(3)}, AdamState())
    with pytest.raises(ContractViolation):
        adam_step({"x": x}, {}, AdamState())


def test_parameter_gradient_check_restores_values(rng):
    w = Tensor(rng.standard_normal(3), requires_grad=True)
    before = w.values.copy()
    error = parameter_gradient_check(lambda: ad.sum(ad.exp(w) * w), {"w": w})
    assert error < 1e-6
    np.testing.assert_array_equal(w.values, before)


def test_oracle_failure_on_non_finite():
    with pytest.raises(OracleFailureException):
        finite_difference_check(lambda x: ad.sum(ad.log(x)), np.array([-1.0]))


def numeric_gradient(fn, x0, h=1e-5):
    grad = np.zeros_like(x0)
    with no_grad():
        for idx in np.ndindex(*x0.shape):
            up, down = x0.copy(), x0.copy()
            up[idx] += h
            down[idx] -= h
            grad[idx] = (fn(Tensor(up)).item() - fn(Tensor(down)).item()) / (2 * h)
    return grad


def _away_from_zero(rng, shape):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < 1e-2, 0.5, x)


OPS = {
    "exp": (lambda x: ad.exp(x), lambda rng: 0.5 * rng.standard_normal(3)),
    "log": (lambda x: ad.log(x), lambda rng: rng.uniform(0.5, 2.0, 3)),
    "softplus": (lambda x: ad.softplus(x), lambda rng: rng.standard_normal(3)),
    "sinh": (lambda x: ad.sinh(x), lambda rng: rng.standard_normal(3)),
    "arcsinh": (lambda x: ad.arcsinh(x), lambda rng: rng.standard_normal(3)),
    "relu": (lambda x: ad.relu(x), lambda rng: _away_from_zero(rng, 3)),
    "square": (lambda x: ad.square(x), lambda rng: rng.standard_normal(3)),
    "sqrt": (lambda x: ad.sqrt(x), lambda rng: rng.uniform(0.5, 2.0, 3)),
    "mul": (lambda x: x * np.array([1.5, -0.7, 2.0]), lambda rng: rng.standard_normal(3)),
    "div": (lambda x: np.array([1.5, -0.7, 2.0]) / x, lambda rng: rng.uniform(0.5, 2.0, 3)),
    "matmul": (lambda x: x @ np.array([[1.0, -2.0], [0.5, 0.3], [-1.2, 0.8]]), lambda rng: rng.standard_normal((2, 3))),
    "cholesky": (lambda x: ad.cholesky(x @ ad.transpose(x) + 3.0 * np.eye(3)), lambda rng: rng.standard_normal((3, 3))),
    "solve_triangular": (
        lambda x: ad.solve_triangular(ad.tril(x) + 3.0 * np.eye(3), np.array([1.0, -2.0, 0.5])),
        lambda rng: rng.standard_normal((3, 3)),
    ),
}


@pytest.mark.parametrize("op", sorted(OPS))
def test_gradient_property_over_random_inputs(op):
    forward, sample = OPS[op]
    rng = np.random.default_rng(sorted(OPS).index(op))
    for _ in range(100):
        x0 = sample(rng)
        weights = rng.standard_normal(forward(Tensor(x0)).shape)

        def fn(x):
            return ad.sum(forward(x) * weights)

        x = Tensor(x0, requires_grad=True)
        np.testing.assert_allclose(backward(fn(x))[x], numeric_gradient(fn, x0), rtol=1e-5, atol=1e-7)


def test_cholesky_factor_round_trip(rng):
    for _ in range(20):
        L = np.tril(rng.standard_normal((4, 4)))
        L[np.diag_indices(4)] = np.abs(L[np.diag_indices(4)]) + 0.5
        np.testing.assert_allclose(ad.cholesky_factor(L @ L.T), L, rtol=1e-10, atol=1e-12)


def test_repeated_backward_is_bitwise_identical(rng):
    X = rng.standard_normal((4, 3))
    W = rng.standard_normal((3, 3))

    def gradient():
        x = Tensor(X, requires_grad=True)
        L = ad.cholesky(ad.transpose(x) @ x + np.eye(3))
        loss = ad.sum(ad.softplus(x @ W)) + ad.logdet_from_cholesky(L)
        return backward(loss)[x]

    np.testing.assert_array_equal(gradient(), gradient())


def test_softplus_at_zero():
    x = Tensor(np.array(0.0), requires_grad=True)
    y = ad.softplus(x)
    assert y.item() == pytest.approx(np.log(2.0), abs=1e-15)
    assert float(backward(y)[x]) == pytest.approx(0.5)
