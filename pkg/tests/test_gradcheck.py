import numpy as np

import carpe.backend as K
from carpe import tensor as T
from carpe.gradcheck import grad_check


def test_linear_layer_central_differences_exact():
    # Quadratic loss in the parameters: central differences are exact up
    # to roundoff, so a very tight tolerance must pass.
    rng = np.random.default_rng(0)
    w = T.parameter(rng.normal(size=(4, 3)))
    b = T.parameter(rng.normal(size=3))
    x = T.Tensor(rng.normal(size=(5, 4)))
    y = T.Tensor(rng.normal(size=(5, 3)))

    def f():
        pred = T.add_row(T.matmul(x, w), b)
        diff = T.sub(pred, y)
        return T.sum_all(T.mul(diff, diff))

    report = grad_check(f, [("w", w), ("b", b)], eps=1e-5, tol=1e-6)
    assert report.passed, report.summary()


def test_softmax_cross_entropy_head():
    rng = np.random.default_rng(1)
    w = T.parameter(rng.normal(size=(6, 10), scale=0.5))
    x = T.Tensor(rng.normal(size=(4, 6)))
    targets = [1, 7, 3, 9]

    def f():
        return T.cross_entropy(T.matmul(x, w), targets, np.ones(4, dtype=bool))

    report = grad_check(f, [("w", w)], eps=1e-5, tol=1e-5)
    assert report.passed, report.summary()


def test_layernorm_gelu_chain():
    rng = np.random.default_rng(2)
    w = T.parameter(rng.normal(size=(5, 8)))
    gamma = T.parameter(np.ones(8))
    beta = T.parameter(np.zeros(8))
    x = T.Tensor(rng.normal(size=(3, 5)))

    def f():
        h = T.gelu(T.layer_norm(T.matmul(x, w), gamma, beta))
        return T.sum_all(T.mul(h, h))

    report = grad_check(f, [("w", w), ("gamma", gamma), ("beta", beta)], eps=1e-5, tol=1e-6)
    assert report.passed, report.summary()


def test_corrupted_backward_is_caught(monkeypatch):
    # Doubling the gelu backward must trip the checker.
    real = K.gelu_backward
    monkeypatch.setattr(K, "gelu_backward", lambda x, gy: 2.0 * real(x, gy))
    rng = np.random.default_rng(3)
    w = T.parameter(rng.normal(size=(4, 4)))
    x = T.Tensor(rng.normal(size=(2, 4)))

    def f():
        return T.sum_all(T.gelu(T.matmul(x, w)))

    report = grad_check(f, [("w", w)], eps=1e-5, tol=1e-4)
    assert not report.passed


def test_subsampling_floor_respected():
    rng = np.random.default_rng(4)
    w = T.parameter(rng.normal(size=(40, 40)))  # 1600 > 64 coords
    x = T.Tensor(rng.normal(size=(2, 40)))

    def f():
        return T.sum_all(T.matmul(x, w))

    report = grad_check(f, [("w", w)], eps=1e-5, tol=1e-6, max_coords=64)
    assert report.checked_coords["w"] == 64
    assert report.passed
