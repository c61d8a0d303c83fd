"""scikit-learn style front end: ``fit`` on annotated sequences, ``predict`` boxes.

``X`` is a list of :class:`~siamtir.synthetic.AnnotatedSequence` (a single
sequence or a dataset directory also works).  ``predict`` initialises from
the first ground-truth box of every sequence and returns one ``T x 4`` box
array per sequence; ``score`` is the supervised-protocol accuracy.
"""
from __future__ import annotations

import os
from dataclasses import replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import RunConfig, evaluate
from .exceptions import SequenceFormatError
from .model import NetworkConfig, load_model
from .synthetic import AnnotatedSequence, read_dataset
from .tracker import ScaleConfig, SiameseTracker, run_sequence
from .training import TrainConfig, train


def check_box(box) -> np.ndarray:
    """A finite ``(x, y, w, h)`` float64 vector with positive width and height."""
    arr = np.asarray(box, dtype=np.float64)
    if arr.shape != (4,):
        raise ValueError(f"box must have 4 values, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"box {arr.tolist()} is not finite")
    if arr[2] <= 0 or arr[3] <= 0:
        raise ValueError(f"box {arr.tolist()} has non-positive size")
    return arr


def check_sequence(seq) -> AnnotatedSequence:
    if not isinstance(seq, AnnotatedSequence):
        raise TypeError(f"expected an AnnotatedSequence, got {type(seq).__name__}")
    if seq.frames.ndim != 3 or seq.frames.dtype != np.uint8:
        raise SequenceFormatError(f"{seq.name}: frames must be a T x H x W uint8 array")
    if len(seq) < 1:
        raise SequenceFormatError(f"{seq.name}: empty sequence")
    if seq.boxes.shape != (len(seq), 4):
        raise SequenceFormatError(f"{seq.name}: need one box per frame, got {seq.boxes.shape}")
    check_box(seq.boxes[0])
    return seq


def check_sequences(X) -> list[AnnotatedSequence]:
    """Normalise ``X`` (sequence, iterable of sequences or dataset path) to a validated list."""
    if isinstance(X, (str, os.PathLike)):
        X = read_dataset(Path(X))
    elif isinstance(X, AnnotatedSequence):
        X = [X]
    seqs = [check_sequence(s) for s in X]
    if not seqs:
        raise ValueError("no sequences given")
    return seqs


class SiameseTIRTracker(BaseEstimator):
    """Two-head Siamese tracker with scikit-learn parameter handling."""

    def __init__(self, variant="full", epochs=50, batch_size=8, pairs_per_epoch=64,
                 lr_start=1e-2, lr_end=1e-5, momentum=0.9, weight_decay=5e-4,
                 positive_radius=2.0, cf_lambda=0.01, cf_label_peak=5.0,
                 scale_damping=0.59, scale_penalty=0.975, window_influence=0.25,
                 random_state=0, verify=False):
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.pairs_per_epoch = pairs_per_epoch
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.positive_radius = positive_radius
        self.cf_lambda = cf_lambda
        self.cf_label_peak = cf_label_peak
        self.scale_damping = scale_damping
        self.scale_penalty = scale_penalty
        self.window_influence = window_influence
        self.random_state = random_state
        self.verify = verify

    def _network(self) -> NetworkConfig:
        base = NetworkConfig()
        sim = replace(base.similarity, cf_lambda=self.cf_lambda, cf_label_peak=self.cf_label_peak)
        return replace(base, similarity=sim).variant(self.variant)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           pairs_per_epoch=self.pairs_per_epoch, momentum=self.momentum,
                           weight_decay=self.weight_decay, lr_start=self.lr_start, lr_end=self.lr_end,
                           positive_radius=self.positive_radius, seed=int(self.random_state or 0),
                           verify=self.verify)

    def _scale_config(self) -> ScaleConfig:
        return ScaleConfig(damping=self.scale_damping, penalty=self.scale_penalty,
                           window_influence=self.window_influence)

    def fit(self, X, y=None, out_dir=None):
        seqs = check_sequences(X)
        self.network_ = self._network()
        result = train(seqs, self._train_config(), self.network_, out_dir=out_dir)
        self.params_ = result.params
        self.history_ = result.history
        self.loss_curve_ = result.losses
        return self

    @classmethod
    def from_checkpoint(cls, path, **kwargs) -> "SiameseTIRTracker":
        params, network = load_model(path)
        est = cls(**kwargs)
        est.params_, est.network_ = params, network
        est.history_, est.loss_curve_ = [], []
        return est

    def predict(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "params_")
        return [run_sequence(self.params_, s, self.network_, self._scale_config()) for s in check_sequences(X)]

    def evaluate(self, X, run_config: RunConfig = RunConfig()):
        check_is_fitted(self, "params_")
        make = lambda: SiameseTracker(self.params_, self.network_, self._scale_config())  # noqa: E731
        return evaluate(make, check_sequences(X), run_config)

    def score(self, X, y=None) -> float:
        return self.evaluate(X).accuracy
