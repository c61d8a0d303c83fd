"""Command-line entry point: ``siamtir {synth,train,track,eval,gradcheck}``.

Exit codes: 0 success, 1 usage or configuration error (or a failed
``gradcheck``), 2 data error (missing or malformed checkpoint, sequence or
dataset).
"""
from __future__ import annotations

import argparse
import functools
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .autodiff import precision
from .evaluation import RunConfig, evaluate, render_overlays
from .exceptions import (
    CheckpointError,
    InsufficientFramesError,
    NoValidFramesError,
    SequenceFormatError,
)
from .model import NetworkConfig, load_model
from .synthetic import (
    distractor_suite,
    easy_suite,
    list_sequences,
    read_dataset,
    read_sequence,
    training_set,
    write_boxes,
    write_dataset,
)
from .tracker import BoxOutOfFrameError, ScaleConfig, SiameseTracker
from .training import TrainConfig, train
from .verification import run_suite

log = logging.getLogger("siamtir")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
EXIT_CHECK_FAILED = 1
DATA_ERRORS = (FileNotFoundError, NotADirectoryError, SequenceFormatError, CheckpointError,
               InsufficientFramesError, NoValidFramesError, BoxOutOfFrameError)
CONFIG_SECTIONS = ("synth", "train", "network", "run", "scale")
SUITES = {"easy": easy_suite, "distractor": distractor_suite, "train": training_set}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with synth/train/network/run/scale sections")
    p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed")
    p.add_argument("--verify", action="store_true", help="64-bit arithmetic")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="siamtir", description="Two-head Siamese tracker for thermal infrared video.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--suite", choices=sorted(SUITES), default=None)
    p.add_argument("--n-sequences", type=int, default=None)
    p.add_argument("--n-frames", type=int, default=None)

    p = sub.add_parser("train", help="train on a dataset directory")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--variant", choices=("full", "semantic", "baseline"), default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("track", help="track one sequence, writing output.txt")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="sequence directory")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--overlays", action="store_true", help="also render annotated frames")

    p = sub.add_parser("eval", help="supervised evaluation of a dataset")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("gradcheck", help="run the gradient and oracle verification suite")
    _common(p)
    p.add_argument("--quick", action="store_true", help="skip the full-network check")
    return parser


def load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise UsageError(f"unknown config sections {sorted(unknown)}; expected {list(CONFIG_SECTIONS)}")
    return cfg


def _build(cls, section: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise UsageError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad {what} config: {exc}") from None


def _network(section: dict) -> NetworkConfig:
    section = dict(section)
    variant = section.pop("variant", "full")
    try:
        return NetworkConfig.from_dict(section).variant(variant)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad network config: {exc}") from None


def _run_config(cfg: dict, args) -> RunConfig:
    section = dict(cfg.get("run", {}))
    if "eao_interval" in section:
        section["eao_interval"] = tuple(section["eao_interval"])
    section.setdefault("checkpoint", str(args.checkpoint))
    section.setdefault("data", str(args.data))
    if args.seed is not None:
        section["seed"] = args.seed
    return _build(RunConfig, section, "run")


def _scale_config(cfg: dict) -> ScaleConfig:
    section = dict(cfg.get("scale", {}))
    if "factors" in section:
        section["factors"] = tuple(section["factors"])
    return _build(ScaleConfig, section, "scale")


def _model(args):
    params, network = load_model(args.checkpoint)
    if args.verify:
        params = params.astype(np.float64)
    return params, network


# -- subcommands --------------------------------------------------------------

def cmd_synth(args, cfg) -> int:
    section = dict(cfg.get("synth", {}))
    suite = args.suite or section.pop("suite", "distractor")
    section.pop("suite", None)
    if args.n_sequences is not None:
        section["n_sequences"] = args.n_sequences
    if args.n_frames is not None:
        section["n_frames"] = args.n_frames
    seed = args.seed if args.seed is not None else section.pop("seed", 0)
    section.pop("seed", None)
    try:
        sequences = SUITES[suite](seed, **section)
    except TypeError as exc:
        raise UsageError(f"bad synth config: {exc}") from None
    paths = write_dataset(sequences, args.out)
    print(f"wrote {len(paths)} sequences to {args.out}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    section = dict(cfg.get("train", {}))
    if args.seed is not None:
        section["seed"] = args.seed
    if args.verify:
        section["verify"] = True
    if args.epochs is not None:
        section["epochs"] = args.epochs
    config = _build(TrainConfig, section, "train")
    net_section = dict(cfg.get("network", {}))
    if args.variant:
        net_section["variant"] = args.variant
    network = _network(net_section)
    if (network.exemplar_size, network.search_size) != (config.exemplar_size, config.search_size):
        network = replace(network, exemplar_size=config.exemplar_size, search_size=config.search_size)
    if not list_sequences(args.data):
        raise SequenceFormatError(f"no sequences found in {args.data}")
    dataset = read_dataset(args.data)

    def report(epoch, loss, lr):
        print(f"epoch {epoch:3d} loss {loss:.6f} lr {lr:.3e}", flush=True)

    result = train(dataset, config, network, out_dir=args.out, on_epoch=report)
    print(f"final checkpoint {result.checkpoints[-1]} digest {result.params.digest()}")
    return EXIT_OK


def cmd_track(args, cfg) -> int:
    params, network = _model(args)
    sequence = read_sequence(args.data)
    ctx = precision(np.float64) if args.verify else nullcontext()
    with ctx:
        tracker = SiameseTracker(params, network, _scale_config(cfg))
        boxes = np.empty((len(sequence), 4))
        boxes[0] = sequence.boxes[0]
        tracker.init(sequence.frames[0], sequence.boxes[0])
        for t in range(1, len(sequence)):
            boxes[t] = tracker.update(sequence.frames[t])
    args.out.mkdir(parents=True, exist_ok=True)
    write_boxes(args.out / "output.txt", boxes)
    if args.overlays:
        render_overlays(sequence, boxes, sequence.boxes, args.out / "overlays")
    print(f"tracked {len(sequence)} frames -> {args.out / 'output.txt'}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    params, network = _model(args)
    run = _run_config(cfg, args)
    scale = _scale_config(cfg)
    if not list_sequences(args.data):
        raise SequenceFormatError(f"no sequences found in {args.data}")
    sequences = read_dataset(args.data)
    make = functools.partial(SiameseTracker, params, network, scale)
    ctx = precision(np.float64) if args.verify else nullcontext()
    with ctx:
        result = evaluate(make, sequences, run, workers=max(1, args.workers))
    json_path, csv_path = result.write(args.out)
    print(f"accuracy {result.accuracy:.6f} robustness {result.robustness_count} "
          f"({result.robustness_per100:.6f}/100) eao {result.eao:.6f}")
    print(f"wrote {json_path} and {csv_path}")
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    results = run_suite(seed=args.seed or 0, full_network=not args.quick, report=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "track": cmd_track, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"siamtir: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
