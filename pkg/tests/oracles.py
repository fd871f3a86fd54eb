"""Independent reference implementations used by several test modules.

Everything here is deliberately written with explicit Python loops or
one-line numpy, never by calling the library code it checks.
"""

import math

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def attention_loops(q, k, v, w_out, heads, mask=None):
    """Scaled dot-product attention with explicit per-head loops."""
    nq, d = q.shape
    nk = k.shape[0]
    dh = d // heads
    merged = np.zeros((nq, d))
    for h in range(heads):
        qs, ks, vs = (x[:, h * dh : (h + 1) * dh] for x in (q, k, v))
        for i in range(nq):
            weights = []
            for j in range(nk):
                if mask is not None and not mask[i, j]:
                    weights.append(None)
                else:
                    weights.append(sum(qs[i, t] * ks[j, t] for t in range(dh)) / math.sqrt(dh))
            mx = max(w for w in weights if w is not None)
            exps = [0.0 if w is None else math.exp(w - mx) for w in weights]
            z = sum(exps)
            for j in range(nk):
                for t in range(dh):
                    merged[i, h * dh + t] += (exps[j] / z) * vs[j, t]
    return merged @ w_out


def layer_norm_loops(x, gamma, beta, eps=1e-5):
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        mu = sum(x[i]) / x.shape[1]
        var = sum((v - mu) ** 2 for v in x[i]) / x.shape[1]
        out[i] = (x[i] - mu) / math.sqrt(var + eps) * gamma + beta
    return out


def gelu_scalar(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def mlp_loops(x, w1, b1, w2, b2):
    h = x @ w1 + b1
    h = np.vectorize(gelu_scalar)(h)
    return h @ w2 + b2


def softmax_list(values):
    mx = max(values)
    exps = [math.exp(v - mx) for v in values]
    z = sum(exps)
    return [e / z for e in exps]
