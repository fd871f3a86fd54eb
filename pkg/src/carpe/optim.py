"""AdamW with named parameter groups and per-group hyperparameters."""

import numpy as np

from . import backend as K
from .errors import NumericError


class ParamGroup:
    def __init__(self, name, tensors, lr, weight_decay, trainable=True):
        self.name = name
        self.tensors = list(tensors)  # (param_name, Tensor)
        self.lr = lr
        self.weight_decay = weight_decay
        self.trainable = trainable

    def apply_trainable_flag(self):
        for _, t in self.tensors:
            t.requires_grad = self.trainable


class AdamW:
    """Adaptive per-coordinate updates with decoupled weight decay.

    Parameters with a None gradient are skipped (their moments and decay
    do not advance), so an expert that was never routed in a step stays
    untouched.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8):
        self.groups = list(groups)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self._state = {}

    def _moments(self, t):
        key = id(t)
        if key not in self._state:
            self._state[key] = [np.zeros_like(t.data), np.zeros_like(t.data), 0]
        return self._state[key]

    def zero_grad(self):
        for group in self.groups:
            for _, t in group.tensors:
                t.zero_grad()

    def step(self):
        for group in self.groups:
            if not group.trainable or group.lr == 0.0:
                continue
            for name, t in group.tensors:
                if t.grad is None:
                    continue
                if not np.isfinite(t.grad).all():
                    raise NumericError(f"non-finite gradient for {group.name}/{name}")
                m, v, count = state = self._moments(t)
                state[2] = count + 1
                K.adamw_update(
                    t.data, t.grad, m, v, state[2],
                    group.lr, self.beta1, self.beta2, self.eps, group.weight_decay,
                )
