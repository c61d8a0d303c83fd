"""Online tracking loop: fixed-template matching over a three-scale search."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import ndimage

from .autodiff import Tensor, no_grad
from .cropping import box_center, context_side, crop_square
from .exceptions import TrackerStateError
from .model import NetworkConfig, Templates, exemplar_templates, response_from_templates
from .synthetic import AnnotatedSequence

MIN_BOX_AREA = 16.0


class BoxOutOfFrameError(ValueError):
    """Initial box is degenerate or not inside the frame."""


@dataclass(frozen=True)
class ScaleConfig:
    factors: tuple[float, ...] = (0.9745, 1.0, 1.0375)
    damping: float = 0.59  # weight on the predicted scale
    penalty: float = 0.975
    window_influence: float = 0.25
    upsample: int = 16
    refresh_template: bool = False
    context: float = 0.5

    def __post_init__(self):
        factors = tuple(float(f) for f in self.factors)
        object.__setattr__(self, "factors", factors)
        if list(factors) != sorted(factors) or 1.0 not in factors:
            raise ValueError("scale factors must be sorted and include 1")
        if not 0.0 <= self.damping <= 1.0:
            raise ValueError("damping must lie in [0, 1]")
        if not 0.0 <= self.window_influence < 1.0:
            raise ValueError("window influence must lie in [0, 1)")
        if self.upsample < 1:
            raise ValueError("upsample factor must be >= 1")


@dataclass
class TrackerState:
    center: np.ndarray  # (cx, cy) frame pixels
    base_size: np.ndarray  # (w, h) at init
    scale: float
    templates: Templates
    frame_shape: tuple[int, int]
    exemplar_side: float  # context square side at scale 1
    frames_tracked: int = 0

    @property
    def size(self) -> np.ndarray:
        return self.base_size * self.scale

    @property
    def box(self) -> np.ndarray:
        w, h = self.size
        return np.array([self.center[0] - w / 2, self.center[1] - h / 2, w, h])


def upsample_response(response: np.ndarray, factor: int) -> np.ndarray:
    """Cubic-spline resampling with corner samples aligned.

    An ``m x n`` map becomes ``((m - 1) * factor + 1) x ((n - 1) * factor + 1)``
    so the centre cell of an odd map maps to an exact output pixel.
    """
    if factor == 1:
        return response.astype(np.float64)
    m, n = response.shape
    rows = np.arange((m - 1) * factor + 1) / factor
    cols = np.arange((n - 1) * factor + 1) / factor
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(response.astype(np.float64), [rr, cc], order=3, mode="nearest")


def blend_window(response: np.ndarray, influence: float) -> np.ndarray:
    """Mix the (shifted, unit-sum) response with a unit-sum Hann window."""
    r = response - response.min()
    total = r.sum()
    if total > 0:
        r = r / total
    if influence == 0:
        return r
    window = np.outer(np.hanning(response.shape[0]), np.hanning(response.shape[1]))
    window /= window.sum()
    return (1.0 - influence) * r + influence * window


def _penalised(peak: float, factor: float, penalty: float) -> float:
    if factor == 1.0:
        return peak
    # a penalty must lower the score whatever its sign
    return peak * penalty if peak >= 0 else peak / penalty


def update_scale(scale: float, factor: float, damping: float) -> float:
    """Linear interpolation between the current and the predicted scale.

    Written as ``s * (1 + d (f - 1))`` so a unit factor leaves ``s`` bit-exact.
    """
    return scale * (1.0 + damping * (factor - 1.0))


def peak_location(response: np.ndarray) -> tuple[int, int]:
    """Row-major argmax; ties go to the smallest flat index."""
    row, col = np.unravel_index(int(np.argmax(response)), response.shape)
    return int(row), int(col)


class SiameseTracker:
    """Stateful wrapper around :func:`init` / :func:`track_frame`."""

    def __init__(self, params, network: NetworkConfig | None = None, scale: ScaleConfig | None = None):
        self.params = params
        self.network = network or NetworkConfig()
        self.scale_config = scale or ScaleConfig()
        self.state: TrackerState | None = None
        self.last_diagnostics: dict[str, Any] = {}

    def init(self, frame: np.ndarray, box) -> None:
        self.state = init(frame, box, self.params, self.network, self.scale_config)

    def update(self, frame: np.ndarray) -> np.ndarray:
        box, self.last_diagnostics = track_frame(self.state, frame, self.params, self.network,
                                                 self.scale_config)
        return box


def _validate_box(frame: np.ndarray, box) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64)
    x, y, w, h = box
    if not (w > 0 and h > 0) or w * h < MIN_BOX_AREA:
        raise BoxOutOfFrameError(f"box {box.tolist()} has area below {MIN_BOX_AREA}")
    hh, ww = frame.shape[:2]
    tol = 1e-6
    if x < -tol or y < -tol or x + w > ww + tol or y + h > hh + tol:
        raise BoxOutOfFrameError(f"box {box.tolist()} is not inside the {ww}x{hh} frame")
    return box


def _templates_at(frame, center, side, params, network) -> Templates:
    crop = crop_square(frame, center, side, network.exemplar_size)
    with no_grad():
        t = exemplar_templates(params, Tensor(crop[None]), network)
    # freeze the cached arrays
    for part in t:
        if part is not None:
            part.data.setflags(write=False)
    return t


def init(frame: np.ndarray, box, params, network: NetworkConfig,
         scale_config: ScaleConfig | None = None) -> TrackerState:
    scale_config = scale_config or ScaleConfig()
    box = _validate_box(frame, box)
    center = np.array(box_center(box))
    side = context_side(box[2], box[3], scale_config.context)
    templates = _templates_at(frame, center, side, params, network)
    return TrackerState(center, box[2:].copy(), 1.0, templates, tuple(frame.shape[:2]), side)


def track_frame(state: TrackerState | None, frame: np.ndarray, params, network: NetworkConfig,
                scale_config: ScaleConfig | None = None) -> tuple[np.ndarray, dict]:
    """Locate the target in ``frame``; updates ``state`` and returns ``(box, diagnostics)``."""
    if state is None:
        raise TrackerStateError("track_frame called before init")
    cfg = scale_config or ScaleConfig()
    if tuple(frame.shape[:2]) != state.frame_shape:
        raise ValueError(f"frame shape {frame.shape[:2]} differs from init {state.frame_shape}")
    search_side = state.exemplar_side * network.search_size / network.exemplar_size
    sides = [search_side * state.scale * f for f in cfg.factors]
    fill = float(frame.mean())
    crops = np.stack([crop_square(frame, state.center, s, network.search_size, fill)[None] for s in sides])
    with no_grad():
        maps = response_from_templates(params, state.templates, Tensor(crops), network).data
    peaks = [float(m.max()) for m in maps]
    scores = [_penalised(p, f, cfg.penalty) for p, f in zip(peaks, cfg.factors)]
    best = int(np.argmax(scores))
    up = upsample_response(maps[best], cfg.upsample)
    blended = blend_window(up, cfg.window_influence)
    row, col = peak_location(blended)
    mid_r, mid_c = (blended.shape[0] - 1) / 2.0, (blended.shape[1] - 1) / 2.0
    disp_cells = np.array([(row - mid_r) / cfg.upsample, (col - mid_c) / cfg.upsample])
    stride = network.backbone.total_stride
    disp_frame = disp_cells * stride * sides[best] / network.search_size
    h_img, w_img = state.frame_shape
    state.center = np.array([
        min(max(state.center[0] + disp_frame[1], 0.0), float(w_img)),
        min(max(state.center[1] + disp_frame[0], 0.0), float(h_img)),
    ])
    factor = cfg.factors[best]
    state.scale = update_scale(state.scale, factor, cfg.damping)
    state.frames_tracked += 1
    if cfg.refresh_template:
        side = state.exemplar_side * state.scale
        state.templates = _templates_at(frame, state.center, side, params, network)
    diagnostics = {
        "scale_index": best,
        "factor": factor,
        "peaks": peaks,
        "cell_displacement": disp_cells,
        "response": maps[best],
    }
    return state.box, diagnostics


def run_sequence(params, sequence: AnnotatedSequence, network: NetworkConfig | None = None,
                 scale_config: ScaleConfig | None = None) -> np.ndarray:
    """Boxes for every frame: the ground truth on frame 0, tracked afterwards."""
    tracker = SiameseTracker(params, network, scale_config)
    boxes = np.empty((len(sequence), 4))
    boxes[0] = sequence.boxes[0]
    tracker.init(sequence.frames[0], sequence.boxes[0])
    for t in range(1, len(sequence)):
        boxes[t] = tracker.update(sequence.frames[t])
    return boxes
