"""Finite-difference verification of the reverse-mode gradients."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradReport:
    eps: float
    tol: float
    per_param: dict = field(default_factory=dict)  # name -> relative error
    checked_coords: dict = field(default_factory=dict)

    @property
    def max_rel_err(self):
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def worst_param(self):
        if not self.per_param:
            return None
        return max(self.per_param, key=self.per_param.get)

    @property
    def passed(self):
        return self.max_rel_err < self.tol

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.1e}, "
            f"eps {self.eps:.1e}, worst {self.worst_param})"
        )


def grad_check(f, params, eps=1e-5, tol=1e-4, max_coords=64, seed=0):
    """Compare analytic gradients of f() against central differences.

    f is a deterministic closure returning a scalar loss Tensor built
    from `params`, a list of (name, Tensor) pairs. Large tensors are
    subsampled to `max_coords` coordinates (never fewer than min(size,
    64)). The per-parameter error is the two-norm relative difference
    ||a - n|| / max(||a|| + ||n||, 1e-12) over the checked coordinates.
    """
    max_coords = max(max_coords, 64)
    for _, p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = {}
    for name, p in params:
        if p.grad is None:
            analytic[name] = np.zeros_like(p.data)
        else:
            analytic[name] = p.grad.copy()
        p.zero_grad()

    rng = np.random.default_rng(seed)
    report = GradReport(eps=eps, tol=tol)
    for name, p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        num = np.empty(coords.size)
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = f().item()
            flat[c] = orig - eps
            f_minus = f().item()
            flat[c] = orig
            num[j] = (f_plus - f_minus) / (2.0 * eps)
        ana = analytic[name].reshape(-1)[coords]
        denom = max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-12)
        report.per_param[name] = float(np.linalg.norm(ana - num) / denom)
        report.checked_coords[name] = int(coords.size)
    return report
