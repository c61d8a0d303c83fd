"""Shared Siamese feature extractor with a shallow and a deep tap."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .autodiff import Tensor, conv2d, conv_output_size, max_pool2d, relu
from .exceptions import InputTooSmallError, ShapeError


@dataclass(frozen=True)
class ConvLayer:
    kernel: int
    stride: int
    padding: int
    channels: int
    pool: bool = False  # 2x2 max pool after the ReLU


def _desk_layers() -> tuple[ConvLayer, ...]:
    return (
        ConvLayer(7, 2, 0, 16, pool=True),
        ConvLayer(5, 2, 0, 32),
        ConvLayer(3, 1, 0, 32),
        ConvLayer(3, 1, 1, 32),
        ConvLayer(3, 1, 1, 48),
    )


@dataclass(frozen=True)
class BackboneConfig:
    """Layer geometry of the AlexNet-like extractor.

    Taps are 1-based layer indices.  The shallow tap is followed by a 1x1
    convolution to ``reduction_width`` channels.
    """

    layers: tuple[ConvLayer, ...] = field(default_factory=_desk_layers)
    shallow_tap: int = 3
    deep_tap: int = 5
    reduction_width: int = 64
    in_channels: int = 1

    def __post_init__(self):
        layers = tuple(ConvLayer(**l) if isinstance(l, dict) else l for l in self.layers)
        object.__setattr__(self, "layers", layers)
        if not 1 <= self.shallow_tap <= self.deep_tap <= len(layers):
            raise ValueError("taps must satisfy 1 <= shallow_tap <= deep_tap <= layer count")
        if len(layers) >= 2 and any(l.padding != 1 for l in layers[-2:]):
            raise ValueError("the last two convolution layers must carry padding 1")

    @property
    def total_stride(self) -> int:
        stride = 1
        for layer in self.layers[: self.deep_tap]:
            stride *= layer.stride * (2 if layer.pool else 1)
        return stride

    @property
    def deep_channels(self) -> int:
        return self.layers[self.deep_tap - 1].channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        d["layers"] = tuple(ConvLayer(**l) for l in d.get("layers", [asdict(l) for l in _desk_layers()]))
        return cls(**d)

    @classmethod
    def alexnet(cls) -> "BackboneConfig":
        """Full-width layout (expressible, not exercised by the test suite)."""
        return cls(layers=(
            ConvLayer(11, 2, 0, 96, pool=True),
            ConvLayer(5, 1, 0, 256, pool=True),
            ConvLayer(3, 1, 0, 384),
            ConvLayer(3, 1, 1, 384),
            ConvLayer(3, 1, 1, 256),
        ))


class FeaturePair(NamedTuple):
    shallow: Tensor  # reduction_width x Hs x Ws (post 1x1 reduction)
    deep: Tensor


def feature_sizes(config: BackboneConfig, size: int) -> list[int]:
    """Spatial extent after each layer (including its pool) for a square input."""
    sizes = []
    for layer in config.layers:
        size = conv_output_size(size, layer.kernel, layer.stride, layer.padding)
        if layer.pool:
            size //= 2
        sizes.append(size)
    return sizes


def init_backbone(config: BackboneConfig, rng) -> dict[str, np.ndarray]:
    """He-normal kernels and zero biases, drawn from ``rng.normal``."""
    params = {}
    c_in = config.in_channels
    for i, layer in enumerate(config.layers, start=1):
        fan_in = c_in * layer.kernel ** 2
        shape = (layer.channels, c_in, layer.kernel, layer.kernel)
        params[f"backbone.conv{i}.weight"] = rng.normal(shape) * np.sqrt(2.0 / fan_in)
        params[f"backbone.conv{i}.bias"] = np.zeros(layer.channels)
        c_in = layer.channels
    c3 = config.layers[config.shallow_tap - 1].channels
    params["backbone.reduce.weight"] = rng.normal((config.reduction_width, c3, 1, 1)) * np.sqrt(2.0 / c3)
    params["backbone.reduce.bias"] = np.zeros(config.reduction_width)
    return params


def reduce_conv3(shallow_raw: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution that maps the shallow tap to the reduction width."""
    if weight.shape[2:] != (1, 1):
        raise ShapeError(f"reduction kernel must be 1x1, got {weight.shape}")
    return conv2d(shallow_raw, weight, bias)


def extract_features(image: Tensor, params, config: BackboneConfig) -> FeaturePair:
    """Run ``image`` (1 x H x W or N x 1 x H x W, values in [0, 1]) through the stack."""
    image = image if isinstance(image, Tensor) else Tensor(image)
    h, w = image.shape[-2:]
    for size in (h, w):
        if min(feature_sizes(config, size)[: config.deep_tap]) < 1:
            raise InputTooSmallError(f"a {h}x{w} input is below the network footprint")
    x = image
    shallow = deep = None
    for i, layer in enumerate(config.layers[: config.deep_tap], start=1):
        x = conv2d(x, params[f"backbone.conv{i}.weight"], params[f"backbone.conv{i}.bias"],
                   stride=layer.stride, padding=layer.padding)
        x = relu(x)
        if layer.pool:
            x = max_pool2d(x, 2)
        if i == config.shallow_tap:
            shallow = relu(reduce_conv3(x, params["backbone.reduce.weight"],
                                        params["backbone.reduce.bias"]))
        if i == config.deep_tap:
            deep = x
    return FeaturePair(shallow, deep)


@dataclass(frozen=True)
class Alignment:
    aligned: bool
    shape: tuple[int, int] | None
    shallow_map: tuple[int, int]
    deep_map: tuple[int, int]
    report: str = ""


def check_alignment(config: BackboneConfig, exemplar_size: int = 127,
                    search_size: int = 255) -> Alignment:
    """Predict both similarity-map shapes from the layer geometry alone."""
    z = feature_sizes(config, exemplar_size)
    x = feature_sizes(config, search_size)
    zs, xs = z[config.shallow_tap - 1], x[config.shallow_tap - 1]
    zd, xd = z[config.deep_tap - 1], x[config.deep_tap - 1]
    shallow_map = (xs - zs + 1,) * 2
    deep_map = (xd - zd + 1,) * 2
    for name, extent in (("shallow", shallow_map[0]), ("deep", deep_map[0])):
        if extent < 1:
            return Alignment(False, None, shallow_map, deep_map,
                             f"{name} exemplar features exceed the search features")
    if shallow_map != deep_map:
        dim = "height" if shallow_map[0] != deep_map[0] else "width"
        return Alignment(False, None, shallow_map, deep_map,
                         f"{dim} mismatch: shallow map {shallow_map[0]} vs deep map {deep_map[0]}")
    return Alignment(True, shallow_map, shallow_map, deep_map)
