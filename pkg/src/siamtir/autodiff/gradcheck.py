"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, gradients, no_grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], epsilon: float = 1e-4,
               max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest relative error between backprop and central differences.

    ``fn`` rebuilds the scalar output from the current values of ``inputs``
    (which are perturbed in place and restored).  ``max_entries`` caps how
    many coordinates per input are probed; the chosen subset is drawn from
    ``rng`` and always includes the first entry.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
    analytic = gradients(fn(), inputs)
    worst = 0.0
    for t, grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = np.concatenate([[0], rng.choice(np.arange(1, flat.size), max_entries - 1, replace=False)])
        numeric = np.empty(len(idx))
        with no_grad():
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + epsilon
                up = float(fn().data.real.sum())
                flat[i] = orig - epsilon
                down = float(fn().data.real.sum())
                flat[i] = orig
                numeric[k] = (up - down) / (2 * epsilon)
        err = relative_error(grad.reshape(-1)[idx], numeric)
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
