"""Central finite differences, the independent oracle for every gradient test."""
from __future__ import annotations

from typing import Callable

import numpy as np


def finite_diff_grad(fn: Callable[[np.ndarray], float], x, eps: float = 1e-6,
                     indices=None) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``x``.

    ``indices`` restricts evaluation to a subset of flat positions; the other
    entries of the returned array are left at zero.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(fn(x))
        flat[i] = orig - eps
        f_minus = float(fn(x))
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad.reshape(x.shape)


def rel_error(a, b, floor: float = 1e-12) -> float:
    """Norm-wise relative discrepancy ``|a - b| / max(|a|, |b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
