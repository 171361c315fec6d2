"""Central finite-difference oracle for gradient checks."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, parameter


def numerical_grad(f: Callable[[], float], value: np.ndarray, step: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``value`` (perturbed in place).

    ``index`` optionally restricts the probe to a list of flat positions; the
    other entries of the result are NaN.
    """
    grad = np.full(value.shape, np.nan)
    flat = value.reshape(-1)
    gflat = grad.reshape(-1)
    positions = range(flat.size) if index is None else index
    for i in positions:
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise relative error over the probed (non-NaN) entries.

    Magnitudes below ``floor`` times the largest analytic gradient of the whole
    tensor count as that floor, so near-zero entries do not amplify rounding.
    """
    mask = ~np.isnan(numeric)
    a, n = analytic[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(n)), 1e-300) * floor
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), scale)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(
    build_loss: Callable[[dict[str, Tensor]], Tensor],
    arrays: dict[str, np.ndarray],
    step: float = 1e-5,
    max_probes: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Compare reverse-mode gradients of ``build_loss`` with central differences.

    Returns the relative error per input name. With ``max_probes`` only that
    many randomly chosen entries per input are probed numerically.
    """
    params = {k: parameter(v.copy(), name=k) for k, v in arrays.items()}
    loss = build_loss(params)
    grads = backward(loss, params)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in params.items():
        index = None
        if max_probes is not None and p.data.size > max_probes:
            index = rng.choice(p.data.size, size=max_probes, replace=False)

        def f():
            return float(build_loss(params).data)

        num = numerical_grad(f, p.data, step, index)
        errors[name] = relative_error(grads[name], num)
    return errors
