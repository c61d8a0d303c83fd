"""Fourier-domain primitives over the last two axes.

Spectra are ordinary :class:`Tensor` objects holding complex data.  The
transforms themselves come from ``numpy.fft``; only their adjoints are
defined here.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import DegenerateDenominatorError, ShapeError
from .ops import pad2d
from .tensor import Tensor, complex_dtype, ensure_tensor

DENOMINATOR_GUARD = 1e-12


def fft2(t: Tensor) -> Tensor:
    t = ensure_tensor(t)
    real_input = not t.is_complex
    n = t.shape[-2] * t.shape[-1]
    out = np.fft.fft2(t.data).astype(complex_dtype(), copy=False)

    def backward(g):
        gx = np.fft.ifft2(g) * n
        return (gx.real if real_input else gx,)

    return Tensor.from_op(out, (t,), backward, "fft2")


def ifft2(c: Tensor, real: bool = True) -> Tensor:
    """Inverse transform; by default the (assumed negligible) imaginary part is dropped."""
    c = ensure_tensor(c)
    n = c.shape[-2] * c.shape[-1]
    spatial = np.fft.ifft2(c.data)
    if real:
        out = spatial.real.astype(np.float32 if c.dtype == np.complex64 else np.float64)
    else:
        out = spatial.astype(c.dtype)

    def backward(g):
        return (np.fft.fft2(g) / n,)

    return Tensor.from_op(out, (c,), backward, "ifft2")


def conj(c: Tensor) -> Tensor:
    c = ensure_tensor(c)
    return Tensor.from_op(np.conj(c.data), (c,), lambda g: (np.conj(g),), "conj")


def real(c: Tensor) -> Tensor:
    c = ensure_tensor(c)
    return Tensor.from_op(c.data.real.copy(), (c,), lambda g: (g.astype(c.dtype),), "real")


def abs2(c: Tensor) -> Tensor:
    """Squared modulus ``|c|^2`` as a real tensor."""
    return real(c * conj(c))


def cmul(a: Tensor, b: Tensor) -> Tensor:
    return ensure_tensor(a) * ensure_tensor(b)


def cdiv(a: Tensor, b: Tensor, guard: float = DENOMINATOR_GUARD) -> Tensor:
    """Elementwise division that refuses near-zero denominators."""
    b = ensure_tensor(b)
    smallest = float(np.min(np.abs(b.data))) if b.size else np.inf
    if smallest < guard:
        raise DegenerateDenominatorError(
            f"denominator modulus {smallest:.3g} below guard {guard:g}"
        )
    return ensure_tensor(a) / b


def cross_correlate_fft(template: Tensor, search: Tensor) -> Tensor:
    """Same contract as :func:`~siamtir.autodiff.ops.cross_correlate`, via the FFT.

    The template is zero-padded to the search extent, so the circular
    correlation coincides with the valid one on the returned window.
    """
    template, search = ensure_tensor(template), ensure_tensor(search)
    c, h, w = template.shape[-3:]
    cs, hh, ww = search.shape[-3:]
    if c != cs:
        raise ShapeError(f"template has {c} channels, search has {cs}")
    if h > hh or w > ww:
        raise ShapeError(f"template {h}x{w} exceeds search {hh}x{ww}")
    padded = pad2d(template, (0, hh - h), (0, ww - w))
    spectrum = conj(fft2(padded)) * fft2(search)
    circular = ifft2(spectrum).sum(axis=-3)
    return circular[..., : hh - h + 1, : ww - w + 1]
