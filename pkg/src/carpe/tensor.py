"""Dense float64 tensors with reverse-mode automatic differentiation.

Design constraints that matter downstream:

* double precision and row-major storage only; no broadcasting beyond a
  leading batch axis (bias rows, scalar scaling),
* gradients accumulate across backward() calls until explicitly reset,
  because the shared vocabulary head receives gradients from two logit
  streams,
* backward order is the reverse of a deterministic topological sort, so
  two runs over the same graph produce bitwise-identical gradients,
* graph inputs are never mutated in place after an op has recorded them.
"""

import numpy as np

from . import backend as K
from .errors import (
    ConfigError,
    ContractError,
    NumericError,
    PreconditionError,
    ShapeError,
)


class Tensor:
    """Node of the computation graph holding a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Convenience operators; the module-level functions do the real work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale_const(self, float(other))

    def __rmul__(self, other):
        return scale_const(self, float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale_const(self, -1.0)


def parameter(data):
    return Tensor(data, requires_grad=True)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited and p.requires_grad:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def backward(loss):
    """Reverse-mode accumulation from a scalar loss.

    Populates .grad on every requires_grad ancestor. Repeated calls
    without zeroing add up.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    adjoint = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in adjoint:
                adjoint[pid] = adjoint[pid] + pg
            else:
                adjoint[pid] = pg


# ---------------------------------------------------------------------------
# elementwise and shape ops


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    _check_same_shape("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same_shape("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same_shape("mul", a, b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale_const(a, c):
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def scale(a, s):
    """Multiply a tensor by a scalar Tensor (gradient flows to both)."""
    if s.data.size != 1:
        raise ShapeError(f"scale: scalar operand has shape {s.shape}")
    sval = s.data.reshape(-1)[0]

    def back(g):
        ga = g * sval if a.requires_grad else None
        gs = np.array([(g * a.data).sum()]).reshape(s.data.shape) if s.requires_grad else None
        return ga, gs

    return _node(a.data * sval, (a, s), back)


def add_row(x, b):
    """Add a length-d row vector to every row of an [n, d] tensor."""
    if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_row: {x.shape} + {b.shape}")
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def reshape(a, shape):
    old = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d, got {a.shape}")
    return _node(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def concat_rows(parts):
    parts = list(parts)
    if not parts:
        raise ContractError("concat_rows: empty input")
    widths = {p.data.shape[1] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(widths) != 1:
        raise ShapeError(f"concat_rows: incompatible shapes {[p.shape for p in parts]}")
    counts = [p.data.shape[0] for p in parts]
    splits = np.cumsum(counts)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=0))

    return _node(np.concatenate([p.data for p in parts], axis=0), parts, back)


def narrow(a, axis, start, length):
    """Contiguous slice along axis 0 or 1."""
    if axis not in (0, 1) or a.data.ndim < axis + 1:
        raise ShapeError(f"narrow: axis {axis} on shape {a.shape}")
    if start < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(f"narrow: [{start}:{start + length}] out of bounds on {a.shape}")
    idx = (slice(start, start + length),) if axis == 0 else (slice(None), slice(start, start + length))

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _node(a.data[idx].copy(), (a,), back)


def sum_all(a):
    out = np.array(a.data.sum())
    return _node(out, (a,), lambda g: (np.full_like(a.data, g.reshape(-1)[0]),))


def mean_rows(a):
    """Mean over axis 0 of an [n, d] tensor (patch pooling)."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_rows: expected 2-d, got {a.shape}")
    n = a.data.shape[0]
    return _node(a.data.mean(axis=0), (a,), lambda g: (np.tile(g / n, (n, 1)),))


# ---------------------------------------------------------------------------
# neural-net ops


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")

    def back(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), back)


def softmax(v):
    """Stable softmax of a 1-d tensor."""
    if v.data.ndim != 1 or v.data.size < 1:
        raise ShapeError(f"softmax: expected non-empty 1-d input, got {v.shape}")
    if not np.isfinite(v.data).all():
        raise NumericError("softmax: non-finite input")
    e = np.exp(v.data - v.data.max())
    y = e / e.sum()

    def back(g):
        return (y * (g - float(g @ y)),)

    return _node(y, (v,), back)


def gelu(x):
    y = K.gelu_forward(x.data)
    return _node(y, (x,), lambda g: (K.gelu_backward(x.data, g),))


def layer_norm(x, gamma, beta, eps=1e-5):
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm: expected 2-d input, got {x.shape}")
    if gamma.data.shape != (x.data.shape[1],) or beta.data.shape != (x.data.shape[1],):
        raise ShapeError(f"layer_norm: params {gamma.shape}/{beta.shape} vs input {x.shape}")
    y, mean, rstd = K.layernorm_forward(x.data, gamma.data, beta.data, eps)

    def back(g):
        gx, ggamma, gbeta = K.layernorm_backward(x.data, gamma.data, mean, rstd, g)
        return gx, ggamma, gbeta

    return _node(y, (x, gamma, beta), back)


def embedding(table, ids):
    """Row lookups in an embedding table; ids is a plain int sequence."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding: ids must be 1-d, got {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(f"embedding: id out of range for table {table.shape}")

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _node(table.data[ids], (table,), back)


def attention(q, k, v, w_out, heads=1, mask=None):
    """Multi-head scaled dot-product attention over already-projected
    queries/keys/values, heads concatenated then output-projected.

    mask is a bool [n_q, n_k] array; True means attend. Masked positions
    get exactly zero probability. Every row must keep at least one
    allowed column.
    """
    nq, d = q.data.shape
    nk, dk = k.data.shape
    if dk != d or v.data.shape != (nk, d):
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} widths disagree")
    if d % heads != 0:
        raise ConfigError(f"attention: width {d} not divisible by {heads} heads")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (nq, nk):
            raise ShapeError(f"attention: mask {mask.shape} vs scores ({nq}, {nk})")
        if not mask.any(axis=1).all():
            raise PreconditionError("attention: a query row has every column masked")
    return matmul(_attention_core(q, k, v, heads, mask), w_out)


def _attention_core(q, k, v, heads, mask):
    nq, d = q.data.shape
    nk = k.data.shape[0]
    dh = d // heads
    inv = 1.0 / np.sqrt(dh)

    def split(x, n):
        return np.ascontiguousarray(x.reshape(n, heads, dh).transpose(1, 0, 2))

    qh, kh, vh = split(q.data, nq), split(k.data, nk), split(v.data, nk)
    scores = np.matmul(qh, kh.transpose(0, 2, 1)) * inv
    if mask is not None:
        scores = np.where(mask[None, :, :], scores, -np.inf)
    probs = K.softmax_rows(np.ascontiguousarray(scores.reshape(heads * nq, nk)))
    probs = probs.reshape(heads, nq, nk)
    out = np.matmul(probs, vh)  # [heads, nq, dh]
    merged = np.ascontiguousarray(out.transpose(1, 0, 2)).reshape(nq, d)

    def back(g):
        gh = np.ascontiguousarray(g.reshape(nq, heads, dh).transpose(1, 0, 2))
        gprobs = np.matmul(gh, vh.transpose(0, 2, 1))
        gscores = K.softmax_rows_backward(
            np.ascontiguousarray(probs.reshape(heads * nq, nk)),
            np.ascontiguousarray(gprobs.reshape(heads * nq, nk)),
        ).reshape(heads, nq, nk)
        gq = np.matmul(gscores, kh) * inv
        gk = np.matmul(gscores.transpose(0, 2, 1), qh) * inv
        gv = np.matmul(probs.transpose(0, 2, 1), gh)

        def merge(x, n):
            return np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(n, d)

        return merge(gq, nq), merge(gk, nk), merge(gv, nk)

    return _node(merged, (q, k, v), back)


def cross_entropy(logits, targets, row_mask):
    """Mean cross-entropy over the rows selected by row_mask.

    Rows outside the mask contribute nothing: their logit gradients are
    exactly zero.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-d, got {logits.shape}")
    n, vsize = logits.data.shape
    targets = np.asarray(targets, dtype=np.int64)
    row_mask = np.asarray(row_mask, dtype=bool)
    if targets.shape != (n,) or row_mask.shape != (n,):
        raise ShapeError(f"cross_entropy: targets {targets.shape} / mask {row_mask.shape} vs logits {logits.shape}")
    m = int(row_mask.sum())
    if m == 0:
        raise ContractError("cross_entropy: no rows selected")
    sel = np.flatnonzero(row_mask)
    z = logits.data[sel]
    t = targets[sel]
    mx = z.max(axis=1, keepdims=True)
    ez = np.exp(z - mx)
    lse = mx.reshape(-1) + np.log(ez.sum(axis=1))
    loss = float((lse - z[np.arange(m), t]).sum() / m)

    def back(g):
        p = ez / ez.sum(axis=1, keepdims=True)
        p[np.arange(m), t] -= 1.0
        gz = np.zeros_like(logits.data)
        gz[sel] = p * (g.reshape(-1)[0] / m)
        return (gz,)

    return _node(np.array(loss), (logits,), back)


# ---------------------------------------------------------------------------
# initializers


def normal_init(rng, shape, std=0.02):
    return parameter(rng.normal(0.0, std, size=shape))


def zeros_init(shape):
    return parameter(np.zeros(shape))


def ones_init(shape):
    return parameter(np.ones(shape))
