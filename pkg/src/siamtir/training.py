"""Pair sampling, the class-balanced logistic loss and the SGD schedule."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .autodiff import Tensor, gradients, precision, softplus
from .cropping import box_center, context_side, crop_square
from .exceptions import InsufficientFramesError, ShapeError
from .model import NetworkConfig, forward, init_params, save_network
from .params import ParameterSet
from .rng import SplitMix64
from .synthetic import AnnotatedSequence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    pairs_per_epoch: int = 64
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_start: float = 1e-2
    lr_end: float = 1e-5
    positive_radius: float = 2.0  # score-map cells
    exemplar_size: int = 127
    search_size: int = 255
    context: float = 0.5
    max_gap: int = 10
    seed: int = 0
    verify: bool = False  # 64-bit arithmetic

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr_start > self.lr_end > 0:
            raise ValueError("need lr_start > lr_end > 0")
        if self.batch_size < 1 or self.pairs_per_epoch < self.batch_size:
            raise ValueError("pairs_per_epoch must hold at least one batch")

    @property
    def dtype(self):
        return np.float64 if self.verify else np.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class LabelMap(NamedTuple):
    y: np.ndarray  # +1 / -1
    weight: np.ndarray  # non-negative, sums to 1, half the mass on each class


class SamplePair(NamedTuple):
    exemplar: np.ndarray  # 1 x Z x Z in [0, 1]
    search: np.ndarray  # 1 x X x X
    label: LabelMap


def make_label_map(map_shape: tuple[int, int], radius: float) -> LabelMap:
    """+1 within Euclidean ``radius`` cells of the map centre, -1 elsewhere."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    m, n = map_shape
    ii, jj = np.mgrid[0:m, 0:n]
    dist = np.hypot(ii - (m - 1) / 2.0, jj - (n - 1) / 2.0)
    pos = dist <= radius
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_neg == 0:
        raise ValueError(f"radius {radius} covers the whole {m}x{n} map")
    if n_pos == 0:
        raise ValueError(f"radius {radius} selects no cell of the {m}x{n} map")
    y = np.where(pos, 1.0, -1.0)
    weight = np.where(pos, 0.5 / n_pos, 0.5 / n_neg)
    return LabelMap(y, weight)


def logistic_loss(label: LabelMap, scores: Tensor) -> Tensor:
    """Weighted mean of ``log(1 + exp(-y * o))``, averaged over a leading batch axis."""
    scores = scores if isinstance(scores, Tensor) else Tensor(scores)
    if scores.shape[-2:] != label.y.shape:
        raise ShapeError(f"score map {scores.shape} does not match labels {label.y.shape}")
    per_cell = softplus(scores * Tensor(-label.y)) * Tensor(label.weight)
    total = per_cell.sum()
    if scores.ndim == 3:
        total = total * (1.0 / scores.shape[0])
    return total


def lr_at_epoch(epoch: float, config: TrainConfig) -> float:
    """Geometric decay from ``lr_start`` at epoch 0 to ``lr_end`` at the last epoch."""
    if config.epochs == 1:
        return config.lr_start
    t = epoch / (config.epochs - 1)
    return config.lr_start ** (1.0 - t) * config.lr_end ** t


def sgd_step(params: ParameterSet, grads: Sequence[np.ndarray], lr: float, momentum: float,
             weight_decay: float, velocity: dict[str, np.ndarray]) -> None:
    """In-place momentum SGD: ``v = mu v + g + wd p``; ``p -= lr v``."""
    for (name, p), g in zip(params.items(), grads):
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        v = velocity.get(name)
        step = g + weight_decay * p.data
        v = step if v is None else momentum * v + step
        velocity[name] = v
        p.data = (p.data - lr * v).astype(p.data.dtype)


def _valid_frames(seq: AnnotatedSequence) -> np.ndarray:
    return np.flatnonzero((seq.boxes[:, 2] > 1) & (seq.boxes[:, 3] > 1))


def generate_pair(seq: AnnotatedSequence, rng: SplitMix64, config: TrainConfig,
                  map_shape: tuple[int, int] = (17, 17)) -> SamplePair:
    """Exemplar from frame i and search region from a frame j with ``|i - j| <= max_gap``.

    Both crops share the scale set by box i; each is centred on its own box,
    so the target sits at the label centre.
    """
    valid = _valid_frames(seq)
    if len(valid) < 2:
        raise InsufficientFramesError(f"{seq.name}: need 2 annotated frames, found {len(valid)}")
    i = int(valid[rng.integers(0, len(valid))])
    near = valid[np.abs(valid - i) <= config.max_gap]
    near = near[near != i] if len(near) > 1 else near
    if len(near) == 0:
        raise InsufficientFramesError(f"{seq.name}: no frame within {config.max_gap} of {i}")
    j = int(near[rng.integers(0, len(near))])
    box_i, box_j = seq.boxes[i], seq.boxes[j]
    z_side = context_side(box_i[2], box_i[3], config.context)
    x_side = z_side * config.search_size / config.exemplar_size
    exemplar = crop_square(seq.frames[i], box_center(box_i), z_side, config.exemplar_size)
    search = crop_square(seq.frames[j], box_center(box_j), x_side, config.search_size)
    return SamplePair(exemplar[None], search[None], make_label_map(map_shape, config.positive_radius))


def same_frame_pair(seq: AnnotatedSequence, index: int, config: TrainConfig,
                    map_shape: tuple[int, int] = (17, 17)) -> SamplePair:
    box = seq.boxes[index]
    z_side = context_side(box[2], box[3], config.context)
    x_side = z_side * config.search_size / config.exemplar_size
    exemplar = crop_square(seq.frames[index], box_center(box), z_side, config.exemplar_size)
    search = crop_square(seq.frames[index], box_center(box), x_side, config.search_size)
    return SamplePair(exemplar[None], search[None], make_label_map(map_shape, config.positive_radius))


@dataclass
class TrainResult:
    params: ParameterSet
    history: list[tuple[int, float, float]]  # (epoch, mean loss, lr)
    checkpoints: list[Path]

    @property
    def losses(self) -> list[float]:
        return [h[1] for h in self.history]


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss", "lr"])
        for epoch, loss, lr in history:
            writer.writerow([epoch, repr(float(loss)), repr(float(lr))])


def train(dataset: Sequence[AnnotatedSequence], config: TrainConfig,
          network: NetworkConfig | None = None, out_dir=None,
          params: ParameterSet | None = None,
          on_epoch: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Optimise all network parameters on pairs drawn from ``dataset``.

    With ``out_dir`` set, a checkpoint ``epoch_XXX`` is written after every
    epoch together with ``loss_history.csv``; the last one is the model.
    """
    if not dataset:
        raise ValueError("training needs at least one sequence")
    network = network or NetworkConfig(exemplar_size=config.exemplar_size, search_size=config.search_size)
    if (network.exemplar_size, network.search_size) != (config.exemplar_size, config.search_size):
        raise ValueError("network and training crop sizes disagree")
    usable = [s for s in dataset if len(_valid_frames(s)) >= 2]
    if not usable:
        raise InsufficientFramesError("no sequence has two annotated frames")
    map_shape = network.map_shape
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_network(network, out_dir)
    with precision(config.dtype):
        params = (params or init_params(network, config.seed)).astype(config.dtype)
        velocity: dict[str, np.ndarray] = {}
        history, checkpoints = [], []
        root = SplitMix64(config.seed)
        batches = config.pairs_per_epoch // config.batch_size
        for epoch in range(config.epochs):
            lr = lr_at_epoch(epoch, config)
            rng = root.spawn(epoch)
            losses = []
            for _ in range(batches):
                pairs = [generate_pair(usable[rng.integers(0, len(usable))], rng, config, map_shape)
                         for _ in range(config.batch_size)]
                z = Tensor(np.stack([p.exemplar for p in pairs]))
                x = Tensor(np.stack([p.search for p in pairs]))
                loss = logistic_loss(pairs[0].label, forward(params, z, x, network))
                grads = gradients(loss, params.tensors())
                sgd_step(params, grads, lr, config.momentum, config.weight_decay, velocity)
                losses.append(float(loss.item()))
            mean_loss = float(np.mean(losses))
            history.append((epoch, mean_loss, lr))
            log.info("epoch %d loss %.5f lr %.3g", epoch, mean_loss, lr)
            if on_epoch is not None:
                on_epoch(epoch, mean_loss, lr)
            if out_dir is not None:
                checkpoints.append(params.save(out_dir / f"epoch_{epoch:03d}"))
                write_history(history, out_dir / "loss_history.csv")
    return TrainResult(params, history, checkpoints)
