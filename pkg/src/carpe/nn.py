"""Shared transformer building blocks on top of the tensor engine.

Components keep their parameters in nested dicts of Tensors;
flatten_params() turns a tree into (dotted-name, tensor) pairs for the
optimizer and checkpoint code.
"""

import numpy as np

from . import tensor as T


def linear(rng, d_in, d_out, std=0.02, zero=False):
    w = T.zeros_init((d_in, d_out)) if zero else T.normal_init(rng, (d_in, d_out), std)
    return {"w": w, "b": T.zeros_init((d_out,))}


def apply_linear(x, p):
    return T.add_row(T.matmul(x, p["w"]), p["b"])


def layer_norm_params(d):
    return {"g": T.ones_init((d,)), "b": T.zeros_init((d,))}


def apply_layer_norm(x, p):
    return T.layer_norm(x, p["g"], p["b"])


def attention_params(rng, d, std=0.02, zero_out=False):
    p = {
        "wq": T.normal_init(rng, (d, d), std),
        "wk": T.normal_init(rng, (d, d), std),
        "wv": T.normal_init(rng, (d, d), std),
        "wo": T.zeros_init((d, d)) if zero_out else T.normal_init(rng, (d, d), std),
    }
    return p


def self_attention(x, p, heads, mask=None):
    q = T.matmul(x, p["wq"])
    k = T.matmul(x, p["wk"])
    v = T.matmul(x, p["wv"])
    return T.attention(q, k, v, p["wo"], heads=heads, mask=mask)


def cross_attention(queries, kv, p, heads):
    q = T.matmul(queries, p["wq"])
    k = T.matmul(kv, p["wk"])
    v = T.matmul(kv, p["wv"])
    return T.attention(q, k, v, p["wo"], heads=heads)


def mlp_params(rng, d, mult=4, std=0.02, zero_out=False):
    return {
        "w1": T.normal_init(rng, (d, mult * d), std),
        "b1": T.zeros_init((mult * d,)),
        "w2": T.zeros_init((mult * d, d)) if zero_out else T.normal_init(rng, (mult * d, d), std),
        "b2": T.zeros_init((d,)),
    }


def apply_mlp(x, p):
    h = T.gelu(T.add_row(T.matmul(x, p["w1"]), p["b1"]))
    return T.add_row(T.matmul(h, p["w2"]), p["b2"])


def block_params(rng, d, mult=4):
    return {
        "ln1": layer_norm_params(d),
        "attn": attention_params(rng, d),
        "ln2": layer_norm_params(d),
        "mlp": mlp_params(rng, d, mult),
    }


def transformer_block(x, p, heads, mask=None):
    """Pre-norm residual block: x + Attn(LN(x)), then x + MLP(LN(x))."""
    x = T.add(x, self_attention(apply_layer_norm(x, p["ln1"]), p["attn"], heads, mask))
    return T.add(x, apply_mlp(apply_layer_norm(x, p["ln2"]), p["mlp"]))


def causal_mask(n):
    return np.tril(np.ones((n, n), dtype=bool))


def flatten_params(tree, prefix=""):
    """Deterministic (dotted-name, Tensor) pairs from a nested dict."""
    if isinstance(tree, T.Tensor):
        yield prefix, tree
        return
    for key in tree:
        sub = f"{prefix}.{key}" if prefix else str(key)
        yield from flatten_params(tree[key], sub)
