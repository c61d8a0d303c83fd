"""Named learnable tensors and the on-disk checkpoint format.

A checkpoint is two files side by side: ``<stem>.json`` lists every tensor
as ``{"name", "shape", "dtype", "offset"}`` and ``<stem>.bin`` holds the
values as little-endian float32, concatenated in manifest order.
"""
from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from pathlib import Path
from typing import Iterator

import numpy as np

from .autodiff import Tensor, get_default_dtype
from .exceptions import CheckpointError


class ParameterSet:
    """Ordered ``name -> Tensor`` mapping of everything the optimiser updates."""

    def __init__(self, tensors: dict[str, np.ndarray] | None = None):
        self._tensors: OrderedDict[str, Tensor] = OrderedDict()
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=get_default_dtype()), requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def to_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.to_dict())

    def astype(self, dtype) -> "ParameterSet":
        out = ParameterSet()
        for name, t in self._tensors.items():
            out._tensors[name] = Tensor(t.data.astype(dtype), requires_grad=True, name=name)
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, t in self._tensors.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    # -- checkpoint I/O ----------------------------------------------------
    def save(self, path) -> Path:
        """Write ``<path>.json`` + ``<path>.bin``; returns the manifest path."""
        manifest_path, blob_path = checkpoint_paths(path)
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        entries, offset, chunks = [], 0, []
        for name, t in self._tensors.items():
            raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
            entries.append({"name": name, "shape": list(t.shape), "dtype": "float32", "offset": offset})
            chunks.append(raw)
            offset += len(raw)
        blob_path.write_bytes(b"".join(chunks))
        manifest = {"format": "siamtir-checkpoint", "version": 1, "binary": blob_path.name,
                    "tensors": entries}
        manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
        return manifest_path

    @classmethod
    def load(cls, path) -> "ParameterSet":
        manifest_path, blob_path = checkpoint_paths(path)
        if not manifest_path.is_file():
            raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
        try:
            manifest = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{manifest_path}: not a checkpoint manifest ({exc})") from None
        blob_path = manifest_path.with_name(manifest.get("binary", blob_path.name))
        if not blob_path.is_file():
            raise FileNotFoundError(f"checkpoint data not found: {blob_path}")
        blob = blob_path.read_bytes()
        out = cls()
        for entry in manifest["tensors"]:
            if entry.get("dtype", "float32") != "float32":
                raise CheckpointError(f"unsupported checkpoint dtype {entry['dtype']!r}")
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            if start + 4 * count > len(blob):
                raise CheckpointError(f"checkpoint data truncated at tensor {entry['name']!r}")
            values = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape)
            out.add(entry["name"], values)
        return out


def checkpoint_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return stem.with_suffix(".json"), stem.with_suffix(".bin")
