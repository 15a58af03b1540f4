"""JSON parameter checkpoints.

Layout (``format_version`` 1)::

    {
      "format": "tablefill-checkpoint",
      "format_version": 1,
      "meta": {...},                       # free-form run metadata
      "params": [
        {"name": "encoder.embedding", "shape": [200, 32], "data": [...]},
        ...
      ]
    }

``data`` is the row-major flattening of the array. Floats are written with
Python's shortest round-trip repr, so a save/load cycle is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .engine import Tensor

FORMAT = "tablefill-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: Mapping[str, Tensor | np.ndarray], meta: dict | None = None) -> None:
    entries = []
    for name, p in params.items():
        arr = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "data": arr.reshape(-1).tolist()})
    doc = {"format": FORMAT, "format_version": FORMAT_VERSION, "meta": meta or {}, "params": entries}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {doc.get('format_version')}")
    params = {}
    for e in doc["params"]:
        arr = np.array(e["data"], dtype=np.float64)
        if arr.size != int(np.prod(e["shape"], dtype=np.int64)):
            raise CheckpointError(f"{path}: parameter {e['name']} data does not match shape {e['shape']}")
        params[e["name"]] = arr.reshape(e["shape"])
    return params, doc.get("meta", {})
