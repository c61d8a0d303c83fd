"""Structural and semantic correlation-similarity heads.

Both heads transform the exemplar features (attention, then a correlation
filter layer) and slide the result over the untouched search features.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (
    Tensor,
    conj,
    conv2d,
    conv_transpose2d,
    cross_correlate,
    fft2,
    global_avg_pool,
    global_max_pool,
    ifft2,
    real,
    relu,
    scale_broadcast,
    sigmoid,
)
from .exceptions import DegenerateDenominatorError, InputTooSmallError, ShapeError

MIN_CF_LAMBDA = 1e-6
STRUCT_MIN_SIZE = 11  # 7x7 then 5x5 valid convolutions leave a 1x1 map


@dataclass(frozen=True)
class SimilarityConfig:
    attention_mid: int = 32
    reduction_ratio: int = 4
    cf_lambda: float = 0.01
    cf_sigma: float | None = None  # None: min(h, w) / 8
    cf_label_peak: float = 5.0  # target response height; larger values speed up the fusion scalars
    use_cf: bool = True
    structural_attention: bool = True
    semantic_attention: bool = True
    symmetric_attention: bool = False  # also weight the search features

    def __post_init__(self):
        if self.cf_lambda < MIN_CF_LAMBDA:
            raise DegenerateDenominatorError(
                f"CF regulariser {self.cf_lambda:g} below the {MIN_CF_LAMBDA:g} guard"
            )

    def to_dict(self) -> dict:
        return asdict(self)


# -- parameters -------------------------------------------------------------

def init_structural(channels: int, mid: int, rng) -> dict[str, np.ndarray]:
    def he(shape, fan_in):
        return rng.normal(shape) * np.sqrt(2.0 / fan_in)

    return {
        "struct.conv7.weight": he((mid, channels, 7, 7), channels * 49),
        "struct.conv7.bias": np.zeros(mid),
        "struct.conv5.weight": he((mid, mid, 5, 5), mid * 25),
        "struct.conv5.bias": np.zeros(mid),
        "struct.deconv5.weight": he((mid, mid, 5, 5), mid * 25),
        "struct.deconv5.bias": np.zeros(mid),
        # small last layer: the weight map starts near 0.5 everywhere
        "struct.deconv7.weight": rng.normal((mid, 1, 7, 7)) * 0.01,
        "struct.deconv7.bias": np.zeros(1),
    }


def init_semantic(channels: int, ratio: int, rng) -> dict[str, np.ndarray]:
    if channels % ratio:
        raise ShapeError(f"{channels} channels not divisible by reduction ratio {ratio}")
    hidden = channels // ratio
    return {
        "sem.fc1.weight": rng.normal((hidden, channels, 1, 1)) * np.sqrt(2.0 / channels),
        "sem.fc1.bias": np.zeros(hidden),
        "sem.fc2.weight": rng.normal((channels, hidden, 1, 1)) * np.sqrt(1.0 / hidden),
        "sem.fc2.bias": np.zeros(channels),
    }


# -- attention ----------------------------------------------------------------

def structural_weight_map(feature: Tensor, params) -> Tensor:
    """Single-channel weight map in (0, 1), same spatial extent as ``feature``."""
    h, w = feature.shape[-2:]
    if min(h, w) < STRUCT_MIN_SIZE:
        raise InputTooSmallError(f"structural attention needs >= {STRUCT_MIN_SIZE}x{STRUCT_MIN_SIZE}, got {h}x{w}")
    x = relu(conv2d(feature, params["struct.conv7.weight"], params["struct.conv7.bias"]))
    x = relu(conv2d(x, params["struct.conv5.weight"], params["struct.conv5.bias"]))
    x = relu(conv_transpose2d(x, params["struct.deconv5.weight"], params["struct.deconv5.bias"]))
    x = conv_transpose2d(x, params["struct.deconv7.weight"], params["struct.deconv7.bias"])
    return sigmoid(x)


def structural_attention(feature: Tensor, params) -> Tensor:
    return scale_broadcast(feature, structural_weight_map(feature, params))


def _channel_mlp(vec: Tensor, params) -> Tensor:
    n, c = vec.shape
    x = vec.reshape(n, c, 1, 1)
    x = relu(conv2d(x, params["sem.fc1.weight"], params["sem.fc1.bias"]))
    x = conv2d(x, params["sem.fc2.weight"], params["sem.fc2.bias"])
    return x.reshape(n, c)


def semantic_weights(feature: Tensor, params) -> Tensor:
    """Channel weights in (0, 1): one shared MLP over average and max pooled vectors."""
    single = feature.ndim == 3
    if single:
        feature = feature.reshape((1,) + feature.shape)
    c = feature.shape[1]
    hidden = params["sem.fc1.weight"].shape[0]
    if params["sem.fc1.weight"].shape[1] != c or c % hidden:
        raise ShapeError(f"channel MLP {params['sem.fc1.weight'].shape} does not fit {c} channels")
    logits = _channel_mlp(global_avg_pool(feature), params) + _channel_mlp(global_max_pool(feature), params)
    weights = sigmoid(logits)
    return weights.reshape(c) if single else weights


def semantic_attention(feature: Tensor, params) -> Tensor:
    return scale_broadcast(feature, semantic_weights(feature, params))


# -- correlation filter -----------------------------------------------------

def cosine_window(h: int, w: int) -> np.ndarray:
    return np.outer(np.hanning(h), np.hanning(w))


def circular_gaussian(h: int, w: int, sigma: float) -> np.ndarray:
    """Gaussian peaked at index (0, 0) with wrap-around distances."""
    dy = np.minimum(np.arange(h), h - np.arange(h))
    dx = np.minimum(np.arange(w), w - np.arange(w))
    return np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2.0 * sigma ** 2))


@dataclass(frozen=True)
class CFBlockParams:
    lam: float
    sigma: float
    window: np.ndarray
    label: np.ndarray

    @classmethod
    def for_shape(cls, h: int, w: int, lam: float = 0.01, sigma: float | None = None,
                  window: bool = True, peak: float = 1.0) -> "CFBlockParams":
        if h < 3 or w < 3:
            raise InputTooSmallError(f"CF template needs at least 3x3, got {h}x{w}")
        if lam < MIN_CF_LAMBDA:
            raise DegenerateDenominatorError(f"CF regulariser {lam:g} below the {MIN_CF_LAMBDA:g} guard")
        sigma = min(h, w) / 8.0 if sigma is None else float(sigma)
        win = cosine_window(h, w) if window else np.ones((h, w))
        return cls(float(lam), sigma, win, peak * circular_gaussian(h, w, sigma))


def cf_template(feature: Tensor, cf: CFBlockParams) -> Tensor:
    """Closed-form multi-channel ridge regression in the Fourier domain.

    Solves ``min_w || sum_c w_c * x_c - y ||^2 + lam ||w||^2`` under circular
    correlation ``(w * x)[u] = sum_t w[t] x[t + u]``, where ``x`` is the
    windowed feature.  Works on C x h x w or N x C x h x w.
    """
    h, w = feature.shape[-2:]
    if (h, w) != cf.window.shape:
        raise ShapeError(f"CF block built for {cf.window.shape}, got {h}x{w}")
    x = feature * Tensor(cf.window)
    xf = fft2(x)
    yf = np.conj(np.fft.fft2(cf.label))
    energy = real(xf * conj(xf)).sum(axis=-3, keepdims=True) + cf.lam
    wf = (xf * Tensor(yf)) / energy
    return ifft2(wf)


# -- heads ------------------------------------------------------------------

def _template_branch(feature: Tensor, attend, params, config: SimilarityConfig, enabled: bool) -> Tensor:
    z = attend(feature, params) if enabled else feature
    if config.use_cf:
        h, w = z.shape[-2:]
        z = cf_template(z, CFBlockParams.for_shape(h, w, config.cf_lambda, config.cf_sigma,
                                                   peak=config.cf_label_peak))
    return z


def structural_template(shallow_z: Tensor, params, config: SimilarityConfig) -> Tensor:
    return _template_branch(shallow_z, structural_attention, params, config, config.structural_attention)


def semantic_template(deep_z: Tensor, params, config: SimilarityConfig) -> Tensor:
    return _template_branch(deep_z, semantic_attention, params, config, config.semantic_attention)


def _search_branch(feature: Tensor, attend, params, config: SimilarityConfig, enabled: bool) -> Tensor:
    return attend(feature, params) if (enabled and config.symmetric_attention) else feature


def struct_similarity_from_features(shallow_z: Tensor, shallow_x: Tensor, params,
                                    config: SimilarityConfig) -> Tensor:
    template = structural_template(shallow_z, params, config)
    search = _search_branch(shallow_x, structural_attention, params, config, config.structural_attention)
    return cross_correlate(template, search)


def semantic_similarity_from_features(deep_z: Tensor, deep_x: Tensor, params,
                                      config: SimilarityConfig) -> Tensor:
    template = semantic_template(deep_z, params, config)
    search = _search_branch(deep_x, semantic_attention, params, config, config.semantic_attention)
    return cross_correlate(template, search)
