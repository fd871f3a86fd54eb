"""Pure-numpy implementations of the hot kernels.

Same signatures as the compiled extension `carpe._kernels`; the active
implementation is chosen in `carpe.backend`. Everything is float64.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

NAME = "python"


def gelu_forward(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(x, gy):
    # d/dx [x * Phi(x)] = Phi(x) + x * phi(x)
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return gy * (cdf + x * phi)


def layernorm_forward(x, gamma, beta, eps):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gamma + beta, mean, rstd


def layernorm_backward(x, gamma, mean, rstd, gy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    ggamma = (gy * xhat).sum(axis=0)
    gbeta = gy.sum(axis=0)
    gxhat = gy * gamma
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (gxhat - m1 - xhat * m2)
    return gx, ggamma, gbeta


def softmax_rows(scores):
    # Rows may contain -inf (masked positions); those get exactly 0.
    mx = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - mx)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(probs, gprobs):
    dot = (probs * gprobs).sum(axis=1, keepdims=True)
    return probs * (gprobs - dot)


def adamw_update(p, g, m, v, t, lr, beta1, beta2, eps, wd):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + wd * p)
