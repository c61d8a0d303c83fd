"""Differentiable network primitives.

Spatial operations accept either a single ``C x H x W`` tensor or a batch
``N x C x H x W`` and return the same rank they were given.  Convolutions
follow the cross-correlation convention (kernels are not flipped).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import InputTooSmallError, ShapeError
from .tensor import Tensor, ensure_tensor


def _pair(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


def _batched(t: Tensor) -> tuple[Tensor, bool]:
    if t.ndim == 3:
        return t.reshape((1,) + t.shape), True
    if t.ndim != 4:
        raise ShapeError(f"expected a C x H x W or N x C x H x W tensor, got {t.shape}")
    return t, False


def _unbatch(t: Tensor, squeeze: bool) -> Tensor:
    return t.reshape(t.shape[1:]) if squeeze else t


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided view of shape N x C x Ho x Wo x kh x kw."""
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _col2im(cols: np.ndarray, out_hw: tuple[int, int], stride: int) -> np.ndarray:
    """Scatter-add N x C x Ho x Wo x kh x kw patches into N x C x H x W."""
    n, c, ho, wo, kh, kw = cols.shape
    out = np.zeros((n, c) + tuple(out_hw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += cols[..., i, j]
    return out


def _conv_raw(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    kh, kw = w.shape[2:]
    cols = _windows(x, kh, kw, stride)
    return np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding=(0, 0)) -> Tensor:
    """Valid cross-correlation of ``x`` with ``weight`` (K x C x kh x kw)."""
    x, squeeze = _batched(ensure_tensor(x))
    weight = ensure_tensor(weight)
    ph, pw = _pair(padding)
    n, c, h, w = x.shape
    k, kc, kh, kw = weight.shape
    if kc != c:
        raise ShapeError(f"kernel expects {kc} channels, input has {c}")
    ho = conv_output_size(h, kh, stride, ph)
    wo = conv_output_size(w, kw, stride, pw)
    if ho < 1 or wo < 1:
        raise ShapeError(f"{kh}x{kw} kernel does not fit a {h}x{w} input with padding {(ph, pw)}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    wd = weight.data
    out = _conv_raw(xp, wd, stride)

    def backward(g):
        cols = _windows(xp, kh, kw, stride)
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(g, wd, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        gx = _col2im(gcols, xp.shape[2:], stride)
        if ph or pw:
            gx = gx[:, :, ph:ph + h, pw:pw + w]
        return gx, gw

    result = Tensor.from_op(out, (x, weight), backward, "conv2d")
    if bias is not None:
        result = result + ensure_tensor(bias).reshape(1, k, 1, 1)
    return _unbatch(result, squeeze)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1) -> Tensor:
    """Adjoint of :func:`conv2d` with respect to its input.

    ``weight`` has the layout of the convolution it transposes, K x C x kh x kw,
    so a K-channel input becomes a C-channel output of extent
    ``(in - 1) * stride + k``.
    """
    x, squeeze = _batched(ensure_tensor(x))
    weight = ensure_tensor(weight)
    n, k, h, w = x.shape
    wk, c, kh, kw = weight.shape
    if wk != k:
        raise ShapeError(f"transposed kernel expects {wk} input channels, got {k}")
    out_hw = ((h - 1) * stride + kh, (w - 1) * stride + kw)
    xd, wd = x.data, weight.data
    cols = np.tensordot(xd, wd, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    out = _col2im(cols, out_hw, stride)

    def backward(g):
        gx = _conv_raw(g, wd, stride)
        gw = np.tensordot(xd, _windows(g, kh, kw, stride), axes=([0, 2, 3], [0, 2, 3]))
        return gx, gw

    result = Tensor.from_op(out, (x, weight), backward, "conv_transpose2d")
    if bias is not None:
        result = result + ensure_tensor(bias).reshape(1, c, 1, 1)
    return _unbatch(result, squeeze)


def relu(t: Tensor) -> Tensor:
    t = ensure_tensor(t)
    mask = t.data > 0  # subgradient 0 at the kink
    return Tensor.from_op(np.where(mask, t.data, 0).astype(t.dtype), (t,), lambda g: (g * mask,), "relu")


def sigmoid(t: Tensor) -> Tensor:
    t = ensure_tensor(t)
    x = t.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor.from_op(out, (t,), lambda g: (g * out * (1 - out),), "sigmoid")


def softplus(t: Tensor) -> Tensor:
    """``log(1 + exp(t))`` in the overflow-free form ``max(t, 0) + log1p(exp(-|t|))``."""
    t = ensure_tensor(t)
    x = t.data
    out = (np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))).astype(x.dtype)
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor.from_op(out, (t,), lambda g: (g * sig,), "softplus")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size x size`` max pooling; trailing rows/cols are dropped."""
    x, squeeze = _batched(ensure_tensor(x))
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise InputTooSmallError(f"{h}x{w} input is smaller than the {size}x{size} pool")
    blocks = x.data[:, :, :ho * size, :wo * size].reshape(n, c, ho, size, wo, size)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, :ho * size, :wo * size] = gb.reshape(n, c, ho * size, wo * size)
        return (gx,)

    return _unbatch(Tensor.from_op(out, (x,), backward, "max_pool2d"), squeeze)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: C x H x W -> C (or N x C)."""
    x = ensure_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected a 3-D or 4-D tensor, got {x.shape}")
    return x.mean(axis=(-2, -1))


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel spatial maximum; the gradient goes to the first maximiser."""
    x = ensure_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected a 3-D or 4-D tensor, got {x.shape}")
    shape = x.shape
    flat = x.data.reshape(shape[:-2] + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gf = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(gf, arg[..., None], g[..., None], axis=-1)
        return (gf.reshape(shape),)

    return Tensor.from_op(out, (x,), backward, "global_max_pool")


def scale_broadcast(feature: Tensor, weights: Tensor) -> Tensor:
    """Weight a feature map by a per-channel vector or a single-channel map.

    ``feature`` is C x H x W (or batched); ``weights`` is either C / N x C,
    or 1 x H x W / N x 1 x H x W.
    """
    feature, weights = ensure_tensor(feature), ensure_tensor(weights)
    batched = feature.ndim == 4
    fshape = feature.shape
    c, h, w = fshape[-3:]
    wshape = weights.shape
    lead = fshape[:1] if batched else ()
    if wshape in (lead + (c,), (c,)):
        return feature * weights.reshape(wshape[:-1] + (c, 1, 1))
    if wshape in (lead + (1, h, w), (1, h, w)):
        return feature * weights
    raise ShapeError(f"weights {wshape} neither a channel vector nor a 1x{h}x{w} map for {fshape}")


def pad2d(x: Tensor, pad_h: tuple[int, int], pad_w: tuple[int, int]) -> Tensor:
    """Zero-pad the last two axes."""
    x = ensure_tensor(x)
    widths = [(0, 0)] * (x.ndim - 2) + [tuple(pad_h), tuple(pad_w)]
    h, w = x.shape[-2:]
    out = np.pad(x.data, widths)

    def backward(g):
        return (g[..., pad_h[0]:pad_h[0] + h, pad_w[0]:pad_w[0] + w],)

    return Tensor.from_op(out, (x,), backward, "pad2d")


def roll2d(x: Tensor, shift: tuple[int, int]) -> Tensor:
    """Circular shift of the last two axes."""
    x = ensure_tensor(x)
    sh = tuple(int(s) for s in shift)
    return Tensor.from_op(
        np.roll(x.data, sh, axis=(-2, -1)), (x,),
        lambda g: (np.roll(g, (-sh[0], -sh[1]), axis=(-2, -1)),), "roll2d",
    )


def cross_correlate(template: Tensor, search: Tensor) -> Tensor:
    """Valid cross-correlation summed over channels.

    Shapes: ``C x h x w`` with ``C x H x W`` gives an ``(H-h+1) x (W-w+1)`` map.
    Batched inputs give ``N x Ho x Wo``; a single template is broadcast over a
    batch of search regions.
    """
    template, search = ensure_tensor(template), ensure_tensor(search)
    single = template.ndim == 3 and search.ndim == 3
    if template.ndim == 3:
        template = template.reshape((1,) + template.shape)
    if search.ndim == 3:
        search = search.reshape((1,) + search.shape)
    nt, c, h, w = template.shape
    ns, cs, hh, ww = search.shape
    if c != cs:
        raise ShapeError(f"template has {c} channels, search has {cs}")
    if h > hh or w > ww:
        raise ShapeError(f"template {h}x{w} exceeds search {hh}x{ww}")
    if nt not in (1, ns):
        raise ShapeError(f"cannot pair {nt} templates with {ns} search regions")
    ho, wo = hh - h + 1, ww - w + 1
    sd, td = search.data, template.data
    cols = _windows(sd, h, w, 1).transpose(0, 2, 3, 1, 4, 5).reshape(ns, ho * wo, c * h * w)
    tflat = td.reshape(nt, c * h * w, 1)
    out = np.matmul(cols, tflat).reshape(ns, ho, wo)

    def backward(g):
        gflat = g.reshape(ns, ho * wo, 1)
        gt = np.matmul(cols.transpose(0, 2, 1), gflat)  # ns x chw x 1
        if nt == 1 and ns > 1:
            gt = gt.sum(axis=0, keepdims=True)
        gcols = (gflat * tflat.transpose(0, 2, 1)).reshape(ns, ho, wo, c, h, w)
        gs = _col2im(gcols.transpose(0, 3, 1, 2, 4, 5), (hh, ww), 1)
        return gt.reshape(td.shape), gs

    result = Tensor.from_op(out, (template, search), backward, "cross_correlate")
    return result.reshape(ho, wo) if single else result
