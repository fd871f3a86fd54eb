"""Kernel backend selection.

The compiled Cython extension is preferred when importable; the numpy
fallback is always available. `CARPE_BACKEND=python|compiled` forces a
choice at import time, `use()` switches at runtime (tests, benchmarks).
Switching mid-training would break run determinism; don't.
"""

import os

from . import _kernels_py
from .errors import ConfigError

_FUNCTIONS = (
    "gelu_forward",
    "gelu_backward",
    "layernorm_forward",
    "layernorm_backward",
    "softmax_rows",
    "softmax_rows_backward",
    "adamw_update",
)

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_impl = None


def available():
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def use(name):
    """Activate a backend by name ("compiled" or "python")."""
    global _impl
    if name == "python":
        _impl = _kernels_py
    elif name == "compiled":
        if _compiled is None:
            raise ConfigError("compiled kernels are not built; run pip install -e .")
        _impl = _compiled
    else:
        raise ConfigError(f"unknown backend {name!r}; expected 'compiled' or 'python'")
    return _impl


def active():
    return "compiled" if _impl is _compiled and _compiled is not None else "python"


_requested = os.environ.get("CARPE_BACKEND")
if _requested:
    use(_requested)
else:
    use("compiled" if _compiled is not None else "python")


def gelu_forward(x):
    return _impl.gelu_forward(x)


def gelu_backward(x, gy):
    return _impl.gelu_backward(x, gy)


def layernorm_forward(x, gamma, beta, eps):
    return _impl.layernorm_forward(x, gamma, beta, eps)


def layernorm_backward(x, gamma, mean, rstd, gy):
    return _impl.layernorm_backward(x, gamma, mean, rstd, gy)


def softmax_rows(scores):
    return _impl.softmax_rows(scores)


def softmax_rows_backward(probs, gprobs):
    return _impl.softmax_rows_backward(probs, gprobs)


def adamw_update(p, g, m, v, t, lr, beta1, beta2, eps, wd):
    _impl.adamw_update(p, g, m, v, t, lr, beta1, beta2, eps, wd)
