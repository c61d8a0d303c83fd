"""Trained models shared by the tracker and acceptance tests.

Training is the slow part of the suite, so finished runs are kept under the
pytest cache directory.  The cache key hashes the package sources together
with the training setup, so any code change retrains from scratch.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import siamtir
from siamtir.evaluation import RunConfig, evaluate
from siamtir.model import NetworkConfig, load_model
from siamtir.synthetic import training_set
from siamtir.tracker import SiameseTracker
from siamtir.training import TrainConfig, train

EPOCHS = 20
TRAIN_SEQUENCES = 20
SEEDS = (0, 1, 2, 3, 4)


def source_digest() -> str:
    h = hashlib.sha256()
    root = Path(siamtir.__file__).parent
    for path in sorted(root.rglob("*.py")):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


class ModelZoo:
    def __init__(self, root: Path):
        self.root = Path(root) / source_digest()
        self._data = None

    def _dataset(self):
        if self._data is None:
            self._data = training_set(0, TRAIN_SEQUENCES)
        return self._data

    def run_dir(self, variant: str, seed: int) -> Path:
        return self.root / f"{variant}_seed{seed}"

    def get(self, variant: str = "full", seed: int = 0):
        """``(params, network, losses)`` of the final epoch, training on first use."""
        out = self.run_dir(variant, seed)
        done = out / "done.json"
        if not done.is_file():
            cfg = TrainConfig(epochs=EPOCHS, seed=seed)
            train(self._dataset(), cfg, NetworkConfig().variant(variant), out_dir=out)
            done.write_text(json.dumps({"config": cfg.to_dict()}) + "\n")
        params, network = load_model(out / f"epoch_{EPOCHS - 1:03d}")
        with open(out / "loss_history.csv") as fh:
            rows = list(csv.DictReader(fh))
        losses = [float(r["mean_loss"]) for r in rows]
        lrs = [float(r["lr"]) for r in rows]
        return params, network, losses, lrs


def evaluate_model(zoo: ModelZoo, variant: str, seed: int, suite_name: str, sequences) -> dict:
    """Supervised-protocol metrics of one trained model on one suite, cached beside the model."""
    path = zoo.run_dir(variant, seed) / f"eval_{suite_name}.json"
    if path.is_file():
        return json.loads(path.read_text())
    params, network, _, _ = zoo.get(variant, seed)
    res = evaluate(lambda: SiameseTracker(params, network), sequences, RunConfig())
    metrics = {"accuracy": res.accuracy, "robustness_count": res.robustness_count,
               "robustness_per100": res.robustness_per100, "eao": res.eao,
               "frames": sum(r.n_frames for r in res.sequences)}
    path.write_text(json.dumps(metrics) + "\n")
    return metrics
