"""Deterministic thermal-infrared-style sequences with ground-truth boxes.

Frames are 8-bit grayscale in white-hot polarity: the target and its
distractors are warmer (brighter) than a smooth background.  Every output
is a pure function of ``(SceneConfig, seed)``.

On disk a sequence is a directory holding ``000001.pgm ...`` (binary P5),
``groundtruth.txt`` with one ``x,y,w,h`` line per frame and ``meta.json``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import SequenceFormatError
from .rng import SplitMix64

SHAPES = ("blob", "rect", "pedestrian")


@dataclass(frozen=True)
class SceneConfig:
    width: int = 320
    height: int = 240
    n_frames: int = 100
    background: float = 60.0
    gradient_amplitude: float = 25.0
    gradient_drift: float = 0.0  # radians per frame; "dynamics change"
    noise_sigma: float = 4.0
    shape: str = "pedestrian"
    intensity: float = 190.0
    size: tuple[float, float] = (24.0, 40.0)
    size_rate: float = 1.0  # multiplicative per frame
    start: tuple[float, float] | None = None  # target centre; None -> frame centre
    velocity: tuple[float, float] = (0.0, 0.0)
    jitter: float = 0.0  # random-walk std per frame
    bounce: bool = False  # reflect the target off a margin instead of leaving the frame
    camera_velocity: tuple[float, float] = (0.0, 0.0)
    distractors: int = 0
    distractor_offset: float = -25.0  # intensity relative to the target
    occlusions: tuple[tuple[int, int], ...] = ()  # [start, end) frame intervals
    occluder_intensity: float = 25.0

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("a sequence needs at least 2 frames")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if not self.intensity > self.background:
            raise ValueError("white-hot: target intensity must exceed the background level")
        lo = self.background - self.gradient_amplitude
        hi = self.background + self.gradient_amplitude
        if lo < 0 or hi > 255 or not 0 < self.intensity <= 255:
            raise ValueError("scene intensities must stay within [0, 255]")
        if self.distractors and not 0 < self.intensity + self.distractor_offset <= 255:
            raise ValueError("distractor intensity out of range")
        if min(self.size) <= 0 or self.width < 8 or self.height < 8:
            raise ValueError("sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        for key in ("size", "start", "velocity", "camera_velocity"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        d["occlusions"] = tuple(tuple(o) for o in d.get("occlusions", ()))
        return cls(**d)


@dataclass
class AnnotatedSequence:
    frames: np.ndarray  # T x H x W uint8
    boxes: np.ndarray  # T x 4 float64, (x, y, w, h) top-left, 0-indexed
    class_tag: str = "object"
    name: str = "sequence"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be T x H x W, got {self.frames.shape}")
        if len(self.frames) != len(self.boxes):
            raise ValueError(f"{len(self.frames)} frames but {len(self.boxes)} boxes")

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotatedSequence):
            return NotImplemented
        return (self.frames.shape == other.frames.shape and np.array_equal(self.frames, other.frames)
                and np.array_equal(self.boxes, other.boxes) and self.class_tag == other.class_tag)


# -- rendering ------------------------------------------------------------

def _sprite_alpha(shape: str, dx: np.ndarray, dy: np.ndarray, half_w: float, half_h: float) -> np.ndarray:
    """Coverage in [0, 1] of a sprite whose box is [-1, 1]^2 in normalised units."""
    px = min(half_w, half_h)  # pixels per normalised unit along the short side

    def ellipse(cx, cy, rx, ry):
        r = np.sqrt(((dx - cx) / rx) ** 2 + ((dy - cy) / ry) ** 2)
        return np.clip(0.5 - (r - 1.0) * px * min(rx, ry), 0.0, 1.0)

    if shape == "blob":
        return ellipse(0.0, 0.0, 1.0, 1.0)
    if shape == "rect":
        ex = np.clip(0.5 - (np.abs(dx) - 1.0) * half_w, 0.0, 1.0)
        ey = np.clip(0.5 - (np.abs(dy) - 1.0) * half_h, 0.0, 1.0)
        return ex * ey
    head = ellipse(0.0, -0.72, 0.36, 0.28)
    body = ellipse(0.0, 0.28, 0.62, 0.72)
    return np.maximum(head, body)


def _paint(canvas: np.ndarray, shape: str, center, size, intensity: float) -> None:
    h_img, w_img = canvas.shape
    cx, cy = center
    w, h = size
    x0, x1 = int(np.floor(cx - w / 2 - 2)), int(np.ceil(cx + w / 2 + 2))
    y0, y1 = int(np.floor(cy - h / 2 - 2)), int(np.ceil(cy + h / 2 + 2))
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w_img), min(y1, h_img)
    if x1 <= x0 or y1 <= y0:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1] + 0.5  # pixel centres
    dx = (xs - cx) / (w / 2)
    dy = (ys - cy) / (h / 2)
    alpha = _sprite_alpha(shape, dx, dy, w / 2, h / 2)
    # warmer core
    core = intensity * (0.88 + 0.12 * np.clip(1.0 - dx ** 2 - dy ** 2, 0.0, 1.0))
    patch = canvas[y0:y1, x0:x1]
    canvas[y0:y1, x0:x1] = patch * (1 - alpha) + core * alpha


def _background(cfg: SceneConfig, waves: np.ndarray, t: int, camera, grid) -> np.ndarray:
    ys, xs = grid
    xs = xs + camera[0]
    ys = ys + camera[1]
    field_ = np.zeros((cfg.height, cfg.width))
    for fx, fy, phase, weight in waves:
        field_ += weight * np.sin(2 * np.pi * (fx * xs + fy * ys) + phase + cfg.gradient_drift * t)
    field_ /= max(np.abs(waves[:, 3]).sum(), 1e-12)
    return cfg.background + cfg.gradient_amplitude * field_


def _trajectory(cfg: SceneConfig, rng: SplitMix64) -> tuple[np.ndarray, np.ndarray]:
    n = cfg.n_frames
    sizes = np.array(cfg.size)[None, :] * (cfg.size_rate ** np.arange(n))[:, None]
    start = np.array(cfg.start if cfg.start is not None else (cfg.width / 2, cfg.height / 2), dtype=np.float64)
    centers = np.empty((n, 2))
    noise = rng.normal((n, 2)) * cfg.jitter if cfg.jitter > 0 else np.zeros((n, 2))
    pos, vel = start.copy(), np.array(cfg.velocity, dtype=np.float64)
    for t in range(n):
        if t > 0:
            pos = pos + vel + noise[t]
            if cfg.bounce:
                margin = sizes[t] / 2 + 4
                upper = np.array([cfg.width, cfg.height]) - margin
                for k in range(2):
                    if pos[k] < margin[k]:
                        pos[k] = 2 * margin[k] - pos[k]
                        vel[k] = abs(vel[k])
                    elif pos[k] > upper[k]:
                        pos[k] = 2 * upper[k] - pos[k]
                        vel[k] = -abs(vel[k])
        centers[t] = pos
    return centers, sizes


def _distractor_paths(cfg: SceneConfig, centers: np.ndarray, sizes: np.ndarray, rng: SplitMix64):
    """Each distractor passes beside the target at a chosen frame."""
    n = cfg.n_frames
    paths = []
    for k in range(cfg.distractors):
        t_cross = rng.integers(int(0.2 * n), max(int(0.8 * n), int(0.2 * n) + 1))
        angle = rng.uniform(0, 2 * np.pi)
        gap = rng.uniform(0.7, 1.2) * sizes[t_cross, 0]
        offset = gap * np.array([np.cos(angle), np.sin(angle)])
        speed = rng.uniform(0.8, 2.5)
        heading = angle + np.pi / 2 + rng.uniform(-0.4, 0.4)
        vel = speed * np.array([np.cos(heading), np.sin(heading)])
        t = np.arange(n)[:, None]
        path = centers[t_cross] + offset + (t - t_cross) * vel
        scale = rng.uniform(0.85, 1.15)
        paths.append({"centers": path, "scale": scale, "cross_frame": int(t_cross)})
    return paths


def _clip_box(center, size, width, height) -> np.ndarray:
    x0, y0 = center[0] - size[0] / 2, center[1] - size[1] / 2
    x1, y1 = x0 + size[0], y0 + size[1]
    x0, y0 = min(max(x0, 0.0), width), min(max(y0, 0.0), height)
    x1, y1 = min(max(x1, 0.0), width), min(max(y1, 0.0), height)
    return np.array([x0, y0, x1 - x0, y1 - y0])


def generate_sequence(config: SceneConfig, seed: int = 0, name: str | None = None) -> AnnotatedSequence:
    rng = SplitMix64(seed)
    motion_rng, scene_rng, noise_rng, distractor_rng = (rng.spawn(i) for i in range(4))
    centers, sizes = _trajectory(config, motion_rng)
    n_waves = 4
    waves = np.column_stack([
        scene_rng.uniform(-1, 1, (n_waves,)) / 180.0,
        scene_rng.uniform(-1, 1, (n_waves,)) / 140.0,
        scene_rng.uniform(0, 2 * np.pi, (n_waves,)),
        scene_rng.uniform(0.3, 1.0, (n_waves,)),
    ])
    paths = _distractor_paths(config, centers, sizes, distractor_rng)
    camera_v = np.array(config.camera_velocity, dtype=np.float64)
    frames = np.empty((config.n_frames, config.height, config.width), dtype=np.uint8)
    boxes = np.empty((config.n_frames, 4))
    d_intensity = config.intensity + config.distractor_offset
    grid = np.mgrid[0:config.height, 0:config.width] + 0.5
    for t in range(config.n_frames):
        camera = camera_v * t
        canvas = _background(config, waves, t, camera, grid)
        for path in paths:
            _paint(canvas, config.shape, path["centers"][t] - camera, sizes[t] * path["scale"], d_intensity)
        target_center = centers[t] - camera
        _paint(canvas, config.shape, target_center, sizes[t], config.intensity)
        for start, end in config.occlusions:
            if start <= t < end:
                frac = (t - start + 0.5) / max(end - start, 1)
                strip_w = 0.4 * sizes[t, 0]
                sx = target_center[0] - sizes[t, 0] + frac * 2 * sizes[t, 0]
                x0, x1 = int(max(sx - strip_w / 2, 0)), int(min(sx + strip_w / 2, config.width))
                if x1 > x0:
                    canvas[:, x0:x1] = config.occluder_intensity
        if config.noise_sigma > 0:
            canvas = canvas + noise_rng.normal(canvas.shape) * config.noise_sigma
        frames[t] = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
        boxes[t] = _clip_box(target_center, sizes[t], config.width, config.height)
    meta = {
        "config": config.to_dict(),
        "seed": int(seed),
        "distractor_centers": [(p["centers"] - camera_v * np.arange(config.n_frames)[:, None]).tolist()
                               for p in paths],
        "distractor_widths": [(sizes[:, 0] * p["scale"]).tolist() for p in paths],
    }
    return AnnotatedSequence(frames, boxes, class_tag=config.shape, name=name or f"seq_{seed}", meta=meta)


# -- suites -----------------------------------------------------------------

def _moving_config(rng: SplitMix64, n_frames: int, **overrides) -> SceneConfig:
    shape = SHAPES[rng.integers(0, len(SHAPES))]
    w = rng.uniform(18, 30)
    h = w * (rng.uniform(1.3, 1.8) if shape == "pedestrian" else rng.uniform(0.8, 1.25))
    speed = rng.uniform(0.5, 2.0)
    heading = rng.uniform(0, 2 * np.pi)
    base = dict(
        n_frames=n_frames, shape=shape, size=(w, h),
        background=rng.uniform(45, 80), gradient_amplitude=rng.uniform(10, 30),
        intensity=rng.uniform(160, 220), noise_sigma=rng.uniform(2, 6),
        start=(rng.uniform(100, 220), rng.uniform(80, 160)),
        velocity=(speed * np.cos(heading), speed * np.sin(heading)), bounce=True,
    )
    base.update(overrides)
    return SceneConfig(**base)


def easy_suite(seed: int = 0, n_sequences: int = 3, n_frames: int = 60) -> list[AnnotatedSequence]:
    """Constant velocity, no distractors, no occlusion, no size change."""
    rng = SplitMix64(seed)
    out = []
    for i in range(n_sequences):
        cfg = _moving_config(rng.spawn(i), n_frames)
        out.append(generate_sequence(cfg, seed=splitmix_seed(seed, i), name=f"easy_{seed}_{i:02d}"))
    return out


def distractor_suite(seed: int = 0, n_sequences: int = 10, n_frames: int = 100,
                     n_distractors: int = 2) -> list[AnnotatedSequence]:
    """Battery in which same-family distractors pass close to the target."""
    rng = SplitMix64(seed)
    out = []
    for i in range(n_sequences):
        sub = rng.spawn(i)
        cfg = _moving_config(sub, n_frames, distractors=n_distractors,
                             distractor_offset=-sub.uniform(10, 35))
        out.append(generate_sequence(cfg, seed=splitmix_seed(seed, 1000 + i), name=f"distractor_{seed}_{i:02d}"))
    return out


def training_set(seed: int = 0, n_sequences: int = 20, n_frames: int = 60) -> list[AnnotatedSequence]:
    """Mixed-challenge sequences: distractors, jitter, size change, occlusion, camera motion."""
    rng = SplitMix64(seed)
    out = []
    for i in range(n_sequences):
        sub = rng.spawn(i)
        overrides = dict(
            distractors=sub.integers(0, 3),
            distractor_offset=-sub.uniform(10, 40),
            jitter=sub.uniform(0.0, 1.0),
            size_rate=sub.uniform(0.996, 1.004),
            gradient_drift=sub.uniform(0.0, 0.03),
        )
        if sub.random() < 0.3:
            overrides["camera_velocity"] = (sub.uniform(-1, 1), sub.uniform(-1, 1))
        if sub.random() < 0.3:
            start = sub.integers(5, n_frames - 10)
            overrides["occlusions"] = ((start, start + 6),)
        cfg = _moving_config(sub, n_frames, **overrides)
        out.append(generate_sequence(cfg, seed=splitmix_seed(seed, 2000 + i), name=f"train_{seed}_{i:02d}"))
    return out


def splitmix_seed(seed: int, key: int) -> int:
    return SplitMix64(seed).spawn(key).seed


# -- file I/O -----------------------------------------------------------------

def _format_number(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) > 255:
        raise ValueError("only 8-bit binary PGM (P5) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = data[pos + 1:]
    if len(pixels) < w * h:
        raise ValueError(f"expected {w * h} pixels, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8, count=w * h).reshape(h, w).copy()


def frame_name(index: int) -> str:
    return f"{index + 1:06d}.pgm"


def write_boxes(path, boxes: np.ndarray) -> None:
    lines = [",".join(_format_number(v) for v in box) for box in np.asarray(boxes).reshape(-1, 4)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_boxes(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise SequenceFormatError(f"missing annotation file {path}")
    boxes = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.replace("\t", ",").split(",")
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise SequenceFormatError(f"{path.name} line {lineno}: non-numeric value in {line!r}") from None
        if len(values) != 4:
            raise SequenceFormatError(f"{path.name} line {lineno}: expected 4 values, got {len(values)}")
        boxes.append(values)
    return np.array(boxes, dtype=np.float64).reshape(-1, 4)


def write_sequence(seq: AnnotatedSequence, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_pgm(directory / frame_name(i), frame)
    write_boxes(directory / "groundtruth.txt", seq.boxes)
    meta = dict(seq.meta)
    meta.update({"name": seq.name, "class": seq.class_tag, "frames": len(seq)})
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    return directory


def read_sequence(directory) -> AnnotatedSequence:
    directory = Path(directory)
    if not directory.is_dir():
        raise SequenceFormatError(f"sequence directory not found: {directory}")
    boxes = read_boxes(directory / "groundtruth.txt")
    meta_path = directory / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    frames = []
    for i in range(len(boxes)):
        path = directory / frame_name(i)
        if not path.is_file():
            raise SequenceFormatError(f"frame {i} missing: {path}")
        try:
            frames.append(read_pgm(path))
        except ValueError as exc:
            raise SequenceFormatError(f"frame {i} ({path.name}) unreadable: {exc}") from None
    if not frames:
        raise SequenceFormatError(f"{directory} holds no annotated frames")
    name = meta.pop("name", directory.name)
    class_tag = meta.pop("class", "object")
    meta.pop("frames", None)
    return AnnotatedSequence(np.stack(frames), boxes, class_tag=class_tag, name=name, meta=meta)


def list_sequences(root) -> list[Path]:
    """Sequence directories below ``root`` (or ``root`` itself), sorted by name."""
    root = Path(root)
    if (root / "groundtruth.txt").is_file():
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "groundtruth.txt").is_file())


def read_dataset(root) -> list[AnnotatedSequence]:
    return [read_sequence(p) for p in list_sequences(root)]


def write_dataset(sequences, root) -> list[Path]:
    root = Path(root)
    return [write_sequence(seq, root / seq.name) for seq in sequences]


def static_config(**overrides) -> SceneConfig:
    """A motionless target, handy for self-consistency checks."""
    return replace(SceneConfig(), **overrides)
