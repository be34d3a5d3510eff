"""Flat binary tensor store: little-endian float64 blob + JSON sidecar.

The sidecar lists tensor names, shapes, and byte offsets into the blob, plus
an optional free-form ``meta`` dict.  Both model checkpoints and externally
exported backbone weights use this layout.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class CheckpointError(RuntimeError):
    """Missing, truncated, or inconsistent weight files."""


def sidecar_path(bin_path) -> Path:
    p = Path(bin_path)
    return p.with_suffix(p.suffix + ".json")


def save_tensors(named: dict[str, np.ndarray], bin_path, meta: dict | None = None) -> Path:
    """Write tensors to `bin_path` and an index to `bin_path + '.json'`."""
    bin_path = Path(bin_path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, arr in named.items():
            shape = list(np.shape(arr))  # before ascontiguousarray, which promotes 0-d to 1-d
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(arr.tobytes())
            index.append({"name": name, "shape": shape, "offset": offset})
            offset += arr.nbytes
    doc = {"format": "flat-f8-le", "total_bytes": offset, "tensors": index, "meta": meta or {}}
    with open(sidecar_path(bin_path), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return bin_path


def load_tensors(bin_path) -> tuple[dict[str, np.ndarray], dict]:
    """Read tensors and sidecar meta back; raises CheckpointError on mismatch."""
    bin_path = Path(bin_path)
    side = sidecar_path(bin_path)
    if not bin_path.exists():
        raise CheckpointError(f"weight file not found: {bin_path}")
    if not side.exists():
        raise CheckpointError(f"sidecar not found: {side}")
    with open(side) as fh:
        doc = json.load(fh)
    if doc.get("format") != "flat-f8-le":
        raise CheckpointError(f"unsupported weight format: {doc.get('format')!r}")
    blob = bin_path.read_bytes()
    if len(blob) != doc["total_bytes"]:
        raise CheckpointError(
            f"weight file is {len(blob)} bytes, sidecar expects {doc['total_bytes']}"
        )
    out: dict[str, np.ndarray] = {}
    for entry in doc["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=entry["offset"])
        out[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return out, doc.get("meta", {})
