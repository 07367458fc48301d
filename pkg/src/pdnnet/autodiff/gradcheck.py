"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .tensor import Tensor


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    indices: Optional[np.ndarray] = None,
) -> float:
    """Max relative error between backprop and central differences of ``f`` at ``x``.

    ``f`` must map ``x`` to a scalar tensor.  ``x.data`` is perturbed in place
    and restored.  ``indices`` (flat positions) restricts the comparison to a
    subset of entries, which keeps checks of large parameter tensors cheap.
    """
    was = x.requires_grad
    x.requires_grad = True
    saved_grad = x.grad
    x.grad = None
    f(x).backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = saved_grad
    x.requires_grad = was

    flat = x.data.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices, dtype=np.int64)
    numeric = np.empty(len(idx))
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        numeric[n] = (fp - fm) / (2.0 * eps)
    if len(idx) == 0:
        return 0.0
    return float(relative_error(analytic.reshape(-1)[idx], numeric).max())
