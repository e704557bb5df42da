"""Central finite-difference oracle for checking reverse-mode gradients.

Only forward evaluations are used here, so a bug in any backward rule
cannot leak into the reference values.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .numerics import Tape, Tensor, no_grad


def numerical_gradient(f: Callable[[], Tensor], param: Tensor, step: float = 1e-4,
                       rows=None) -> np.ndarray:
    """d f() / d param by central differences, perturbing ``param.data`` in place.

    ``rows`` restricts the perturbation to the given leading-axis indices;
    the other entries of the result are left at zero.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    if rows is None:
        positions = range(flat.size)
    else:
        width = int(np.prod(param.shape[1:])) if param.data.ndim > 1 else 1
        positions = [r * width + j for r in rows for j in range(width)]
    with no_grad():
        for i in positions:
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def analytic_gradients(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.zero_grad()
    with Tape():
        loss = f()
    loss.backward()
    return [p.grad.copy() for p in params]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-4) -> float:
    """Largest relative error between backward and finite differences over ``params``."""
    analytic = analytic_gradients(f, params)
    worst = 0.0
    for p, a in zip(params, analytic):
        worst = max(worst, relative_error(a, numerical_gradient(f, p, step)))
    return worst
