"""Relative-entropy ensemble of similarity maps.

The KL-optimal combination of ``n`` distributions under
``argmin_Q sum_k KL(S_k || Q)`` is their arithmetic mean; the learnable
fusion generalises that mean to ``0.5 * (alpha * f_struct + beta * f_sem) + b``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Tensor, ensure_tensor
from .exceptions import DegenerateMapError, ShapeError, SupportError


def init_fusion() -> dict[str, np.ndarray]:
    return {"fusion.alpha": np.array(1.0), "fusion.beta": np.array(1.0), "fusion.bias": np.array(0.0)}


def normalize_to_distribution(similarity) -> np.ndarray:
    s = np.asarray(similarity, dtype=np.float64)
    shifted = s - s.min()
    total = shifted.sum()
    if not total > 0:
        raise DegenerateMapError("constant similarity map has no distribution")
    return shifted / total


def kl_divergence(s, q) -> float:
    """``sum s * ln(s / q)`` with ``0 * ln(0 / q) = 0``."""
    s, q = np.asarray(s, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if s.shape != q.shape:
        raise ShapeError(f"shape mismatch {s.shape} vs {q.shape}")
    support = s > 0
    if np.any(q[support] <= 0):
        raise SupportError("reference distribution is zero where the first one is not")
    return float(np.sum(s[support] * np.log(s[support] / q[support])))


def fuse_kl_optimal(maps: Sequence) -> np.ndarray:
    """Closed-form minimiser of the summed KL divergences: the elementwise mean."""
    if len(maps) == 0:
        raise ValueError("need at least one map")
    arrays = [np.asarray(m, dtype=np.float64) for m in maps]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ShapeError("all maps must share one shape")
    return np.mean(arrays, axis=0)


def ren_forward(f_struct, f_sem, params) -> Tensor:
    """Learnable fusion ``0.5 * (alpha * f_struct + beta * f_sem) + b``.

    ``f_struct`` may be ``None`` for single-head variants.  ``params`` is any
    mapping holding ``fusion.alpha``, ``fusion.beta`` and ``fusion.bias``.
    """
    alpha, beta, bias = params["fusion.alpha"], params["fusion.beta"], params["fusion.bias"]
    f_sem = ensure_tensor(f_sem)
    if f_struct is None:
        return (beta * f_sem) * 0.5 + bias
    f_struct = ensure_tensor(f_struct)
    if f_struct.shape != f_sem.shape:
        raise ShapeError(f"similarity maps differ: {f_struct.shape} vs {f_sem.shape}")
    return (alpha * f_struct + beta * f_sem) * 0.5 + bias
