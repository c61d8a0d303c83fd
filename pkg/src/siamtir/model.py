"""Full two-head network: backbone, both similarity heads and the fusion layer."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

from .autodiff import Tensor, cross_correlate, ensure_tensor
from .backbone import BackboneConfig, check_alignment, extract_features, init_backbone
from .exceptions import ShapeError
from .fusion import init_fusion, ren_forward
from .params import ParameterSet, checkpoint_paths
from .rng import SplitMix64
from .similarity import (
    SimilarityConfig,
    init_semantic,
    init_structural,
    semantic_attention,
    semantic_similarity_from_features,
    semantic_template,
    structural_attention,
    structural_template,
    struct_similarity_from_features,
)

NETWORK_FILE = "network.json"


@dataclass(frozen=True)
class NetworkConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    exemplar_size: int = 127
    search_size: int = 255
    use_structural: bool = True
    use_semantic: bool = True

    def __post_init__(self):
        if not (self.use_structural or self.use_semantic):
            raise ValueError("at least one similarity head must be enabled")
        if not self.use_semantic:
            raise ValueError("the semantic head is the reference head and cannot be disabled")
        alignment = check_alignment(self.backbone, self.exemplar_size, self.search_size)
        if not alignment.aligned:
            raise ShapeError(f"misaligned similarity maps: {alignment.report}")

    @property
    def map_shape(self) -> tuple[int, int]:
        return check_alignment(self.backbone, self.exemplar_size, self.search_size).shape

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        if "backbone" in d:
            d["backbone"] = BackboneConfig.from_dict(d["backbone"])
        if "similarity" in d:
            d["similarity"] = SimilarityConfig(**d["similarity"])
        return cls(**d)

    def variant(self, name: str) -> "NetworkConfig":
        """Named ablation variants: ``full``, ``semantic`` and ``baseline``."""
        if name == "full":
            return replace(self, use_structural=True,
                           similarity=replace(self.similarity, semantic_attention=True))
        if name == "semantic":
            return replace(self, use_structural=False,
                           similarity=replace(self.similarity, semantic_attention=True))
        if name == "baseline":
            return replace(self, use_structural=False,
                           similarity=replace(self.similarity, semantic_attention=False))
        raise ValueError(f"unknown variant {name!r}")


def init_params(config: NetworkConfig, seed: int = 0) -> ParameterSet:
    """Every tensor any variant may use; unused heads simply get zero gradient."""
    rng = SplitMix64(seed)
    tensors = {}
    tensors.update(init_backbone(config.backbone, rng.spawn(1)))
    sim = config.similarity
    tensors.update(init_structural(config.backbone.reduction_width, sim.attention_mid, rng.spawn(2)))
    tensors.update(init_semantic(config.backbone.deep_channels, sim.reduction_ratio, rng.spawn(3)))
    tensors.update(init_fusion())
    return ParameterSet(tensors)


class Templates(NamedTuple):
    structural: Tensor | None
    semantic: Tensor


def exemplar_templates(params, exemplar, config: NetworkConfig) -> Templates:
    """Exemplar-branch products: attention followed by the CF layer, per head."""
    feats = extract_features(ensure_tensor(exemplar), params, config.backbone)
    struct = structural_template(feats.shallow, params, config.similarity) if config.use_structural else None
    return Templates(struct, semantic_template(feats.deep, params, config.similarity))


def response_from_templates(params, templates: Templates, search, config: NetworkConfig,
                            return_heads: bool = False):
    """Fused similarity of cached templates against one or more search crops."""
    feats = extract_features(ensure_tensor(search), params, config.backbone)
    sim = config.similarity
    deep_x = feats.deep
    if sim.symmetric_attention and sim.semantic_attention:
        deep_x = semantic_attention(deep_x, params)
    f_sem = cross_correlate(templates.semantic, deep_x)
    f_struct = None
    if config.use_structural:
        shallow_x = feats.shallow
        if sim.symmetric_attention and sim.structural_attention:
            shallow_x = structural_attention(shallow_x, params)
        f_struct = cross_correlate(templates.structural, shallow_x)
    fused = ren_forward(f_struct, f_sem, params)
    return (fused, f_struct, f_sem) if return_heads else fused


def forward(params, exemplar, search, config: NetworkConfig, return_heads: bool = False):
    """Score map(s) for exemplar/search crops (1 x H x W or batched N x 1 x H x W)."""
    return response_from_templates(params, exemplar_templates(params, exemplar, config),
                                   search, config, return_heads)


def struct_similarity(params, exemplar, search, config: NetworkConfig) -> Tensor:
    fz = extract_features(ensure_tensor(exemplar), params, config.backbone)
    fx = extract_features(ensure_tensor(search), params, config.backbone)
    return struct_similarity_from_features(fz.shallow, fx.shallow, params, config.similarity)


def semantic_similarity(params, exemplar, search, config: NetworkConfig) -> Tensor:
    fz = extract_features(ensure_tensor(exemplar), params, config.backbone)
    fx = extract_features(ensure_tensor(search), params, config.backbone)
    return semantic_similarity_from_features(fz.deep, fx.deep, params, config.similarity)


def save_network(config: NetworkConfig, directory) -> Path:
    path = Path(directory) / NETWORK_FILE
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_model(checkpoint) -> tuple[ParameterSet, NetworkConfig]:
    """Parameters plus the architecture stored beside them (default network if absent)."""
    params = ParameterSet.load(checkpoint)
    net_path = checkpoint_paths(checkpoint)[0].parent / NETWORK_FILE
    if net_path.is_file():
        return params, NetworkConfig.from_dict(json.loads(net_path.read_text()))
    return params, NetworkConfig()
