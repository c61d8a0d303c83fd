"""Supervised (reset-based) evaluation: accuracy, robustness and a simplified EAO.

The tracker runs until its box stops overlapping the ground truth, the
failure is counted, and it is re-initialised from the ground truth a few
frames later.  Frames shortly after every (re)initialisation are left out of
the accuracy average.

EAO here is a simplified curve average, *not* the official VOT estimator:
each run segment (from a (re)init to its failure or the sequence end) gives
an overlap curve, with frames after a failure counted as zero.  For a
length ``i``, ``Phi(i)`` averages the mean overlap of the first ``i`` frames
over all segments that either failed or last at least ``i`` frames, and
EAO is the mean of ``Phi`` over the configured length interval.  There is
no per-length sequence weighting and no smoothing.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .exceptions import NoValidFramesError
from .synthetic import AnnotatedSequence, frame_name, write_pgm

EAO_NOTE = ("simplified EAO: mean over lengths of the segment-averaged overlap curve; "
            "no per-length weighting or smoothing (not the official VOT estimator)")


class Tracker(Protocol):
    def init(self, frame: np.ndarray, box) -> None: ...

    def update(self, frame: np.ndarray): ...


def iou(a, b) -> float:
    """Intersection over union of two ``(x, y, w, h)`` boxes; 0 when the union is empty."""
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class RunConfig:
    checkpoint: str | None = None
    data: str | None = None
    reinit_delay: int = 5
    burn_in: int = 10
    eao_interval: tuple[int, int] = (10, 50)
    seed: int = 0

    def __post_init__(self):
        if self.reinit_delay < 0 or self.burn_in < 0:
            raise ValueError("delays must be non-negative")
        lo, hi = self.eao_interval
        if not 1 <= lo <= hi:
            raise ValueError("EAO interval needs 1 <= lo <= hi")


@dataclass
class Segment:
    start: int
    overlaps: list[float]
    failed: bool


@dataclass
class SequenceResult:
    name: str
    n_frames: int
    overlaps: np.ndarray  # per frame, NaN where the tracker was not running
    status: list[str]  # init / tracked / failure / skipped / absent
    failures: list[int]
    segments: list[Segment]
    valid: np.ndarray  # frames entering the accuracy average
    attributes: tuple[str, ...] = ()

    @property
    def valid_overlaps(self) -> np.ndarray:
        return self.overlaps[self.valid]


def run_supervised(tracker: Tracker, sequence: AnnotatedSequence, config: RunConfig = RunConfig(),
                   boxes_out: list | None = None) -> SequenceResult:
    """Reset-based protocol on one sequence.

    A frame with zero overlap is a failure; the tracker is restarted from the
    ground truth ``reinit_delay`` frames later.  The first ``burn_in`` frames
    of each run (init frame included) are excluded from accuracy.
    """
    n = len(sequence)
    overlaps = np.full(n, np.nan)
    status = ["skipped"] * n
    valid = np.zeros(n, dtype=bool)
    failures: list[int] = []
    segments: list[Segment] = []
    predicted = np.full((n, 4), np.nan)
    t = 0
    while t < n:
        gt = sequence.boxes[t]
        if gt[2] * gt[3] <= 0:
            status[t] = "absent"
            t += 1
            continue
        tracker.init(sequence.frames[t], gt)
        start = t
        overlaps[t], status[t], predicted[t] = 1.0, "init", gt
        seg = Segment(start, [1.0], False)
        t += 1
        while t < n:
            box = np.asarray(tracker.update(sequence.frames[t]), dtype=np.float64)
            predicted[t] = box
            gt = sequence.boxes[t]
            if gt[2] * gt[3] <= 0:
                status[t] = "absent"
                t += 1
                continue
            ov = iou(box, gt)
            overlaps[t] = ov
            seg.overlaps.append(ov)
            if ov <= 0.0:
                status[t] = "failure"
                failures.append(t)
                seg.failed = True
                t += config.reinit_delay
                break
            status[t] = "tracked"
            valid[t] = t - start >= config.burn_in
            t += 1
        segments.append(seg)
    if boxes_out is not None:
        boxes_out.append(predicted)
    return SequenceResult(sequence.name, n, overlaps, status, failures, segments, valid,
                          sequence_attributes(sequence))


def accuracy(results: Iterable[SequenceResult]) -> float:
    """Mean overlap over all valid (tracked, post-burn-in) frames."""
    values = np.concatenate([r.valid_overlaps for r in results] or [np.empty(0)])
    if values.size == 0:
        raise NoValidFramesError("no frames left after burn-in and failure exclusion")
    return float(values.mean())


def robustness(results: Iterable[SequenceResult]) -> tuple[int, float]:
    """Total failures and failures per 100 frames."""
    results = list(results)
    count = sum(len(r.failures) for r in results)
    frames = sum(r.n_frames for r in results)
    return count, (100.0 * count / frames if frames else 0.0)


def expected_average_overlap(results: Iterable[SequenceResult], interval: tuple[int, int]) -> float:
    segments = [s for r in results for s in r.segments]
    if not segments:
        return 0.0
    lo, hi = interval
    longest = max(len(s.overlaps) for s in segments)
    if any(s.failed for s in segments):
        longest = max(longest, hi)
    hi = min(hi, longest)
    lo = min(lo, hi)
    phis = []
    for i in range(lo, hi + 1):
        curves = []
        for s in segments:
            if not s.failed and len(s.overlaps) < i:
                continue
            curve = np.zeros(i)
            k = min(i, len(s.overlaps))
            curve[:k] = s.overlaps[:k]
            curves.append(curve.mean())
        if curves:
            phis.append(float(np.mean(curves)))
    return float(np.mean(phis)) if phis else 0.0


eao = expected_average_overlap


SEQUENCE_ATTRIBUTES = ("size_change", "occlusion", "camera_motion", "dynamics_change",
                       "motion_change", "distractors")


def sequence_attributes(sequence: AnnotatedSequence) -> tuple[str, ...]:
    cfg = sequence.meta.get("config") or {}
    tags = []
    if abs(cfg.get("size_rate", 1.0) - 1.0) > 1e-9:
        tags.append("size_change")
    if cfg.get("occlusions"):
        tags.append("occlusion")
    if any(cfg.get("camera_velocity") or ()):
        tags.append("camera_motion")
    if cfg.get("gradient_drift", 0.0):
        tags.append("dynamics_change")
    if cfg.get("jitter", 0.0):
        tags.append("motion_change")
    if cfg.get("distractors", 0):
        tags.append("distractors")
    return tuple(tags)


@dataclass
class EvalResult:
    sequences: list[SequenceResult]
    interval: tuple[int, int]
    accuracy: float = field(init=False)
    robustness_count: int = field(init=False)
    robustness_per100: float = field(init=False)
    eao: float = field(init=False)

    def __post_init__(self):
        self.accuracy = accuracy(self.sequences)
        self.robustness_count, self.robustness_per100 = robustness(self.sequences)
        self.eao = expected_average_overlap(self.sequences, self.interval)

    def per_sequence(self) -> dict[str, dict]:
        out = {}
        for r in self.sequences:
            count, per100 = robustness([r])
            try:
                acc = accuracy([r])
            except NoValidFramesError:
                acc = 0.0
            out[r.name] = {
                "accuracy": round(acc, 6),
                "robustness_count": count,
                "robustness_per100": round(per100, 6),
                "eao": round(expected_average_overlap([r], self.interval), 6),
                "frames": r.n_frames,
                "failures": list(r.failures),
            }
        return out

    def per_attribute(self) -> dict[str, dict]:
        out = {}
        for tag in SEQUENCE_ATTRIBUTES:
            subset = [r for r in self.sequences if tag in r.attributes]
            if not subset:
                continue
            count, per100 = robustness(subset)
            try:
                acc = accuracy(subset)
            except NoValidFramesError:
                acc = 0.0
            out[tag] = {"sequences": len(subset), "accuracy": round(acc, 6),
                        "robustness_count": count, "robustness_per100": round(per100, 6),
                        "eao": round(expected_average_overlap(subset, self.interval), 6)}
        return out

    def to_dict(self) -> dict:
        return {
            "accuracy": round(self.accuracy, 6),
            "robustness_count": self.robustness_count,
            "robustness_per100": round(self.robustness_per100, 6),
            "eao": round(self.eao, 6),
            "per_sequence": self.per_sequence(),
            "per_attribute": self.per_attribute(),
            "metadata": {"eao_variant": EAO_NOTE, "eao_interval": list(self.interval)},
        }

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / "metrics.json"
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        csv_path = out_dir / "metrics.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sequence", "frames", "accuracy", "robustness_count", "robustness_per100", "eao"])
            for name, row in self.per_sequence().items():
                writer.writerow([name, row["frames"], f"{row['accuracy']:.6f}", row["robustness_count"],
                                 f"{row['robustness_per100']:.6f}", f"{row['eao']:.6f}"])
            writer.writerow(["ALL", sum(r.n_frames for r in self.sequences), f"{self.accuracy:.6f}",
                             self.robustness_count, f"{self.robustness_per100:.6f}", f"{self.eao:.6f}"])
        return json_path, csv_path


def _run_one(job) -> SequenceResult:
    make_tracker, seq, config = job
    return run_supervised(make_tracker(), seq, config)


def evaluate(make_tracker: Callable[[], Tracker], sequences: Sequence[AnnotatedSequence],
             config: RunConfig = RunConfig(), workers: int = 1) -> EvalResult:
    """Run every sequence (in ``workers`` processes when > 1) and reduce in input order.

    With several workers ``make_tracker`` must be picklable, e.g. a
    ``functools.partial`` over :class:`~siamtir.tracker.SiameseTracker`.
    """
    jobs = [(make_tracker, seq, config) for seq in sequences]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    return EvalResult(results, tuple(config.eao_interval))


# -- overlays ---------------------------------------------------------------

def _draw_rect(img: np.ndarray, box, value: int) -> None:
    h, w = img.shape
    x, y, bw, bh = box
    if not np.all(np.isfinite(box)) or bw <= 0 or bh <= 0:
        return
    x0, y0 = int(round(x)), int(round(y))
    x1, y1 = int(round(x + bw)) - 1, int(round(y + bh)) - 1
    cx0, cx1 = max(x0, 0), min(x1, w - 1)
    cy0, cy1 = max(y0, 0), min(y1, h - 1)
    if cx0 > cx1 or cy0 > cy1:
        return
    if 0 <= y0 < h:
        img[y0, cx0:cx1 + 1] = value
    if 0 <= y1 < h:
        img[y1, cx0:cx1 + 1] = value
    if 0 <= x0 < w:
        img[cy0:cy1 + 1, x0] = value
    if 0 <= x1 < w:
        img[cy0:cy1 + 1, x1] = value


def render_overlays(sequence: AnnotatedSequence, predicted, ground_truth, out_dir) -> list[Path]:
    """One PGM per frame with 1-px outlines: ground truth 128, prediction 255 (drawn last)."""
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1, 4)
    ground_truth = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 4)
    if not len(sequence) == len(predicted) == len(ground_truth):
        raise ValueError("sequence, predictions and ground truth differ in length")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(sequence.frames):
        img = frame.copy()
        _draw_rect(img, ground_truth[i], 128)
        _draw_rect(img, predicted[i], 255)
        path = out_dir / frame_name(i)
        write_pgm(path, img)
        paths.append(path)
    return paths
