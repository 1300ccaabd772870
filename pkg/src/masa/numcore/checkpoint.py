"""Checkpoint directory format: manifest.json + params.bin.

params.bin holds every parameter's float64 values as little-endian bytes,
concatenated in sorted-path order; the manifest records paths, shapes and
offsets alongside run metadata (hyperparameters, seed, epoch). Writing the
same state twice produces byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .params import ParamStore

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"


def save_checkpoint(
    directory: str | Path,
    params: ParamStore,
    hyperparameters: dict,
    seed: int,
    epoch: int,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    offset = 0
    blobs = []
    for path, t in params.items():
        blob = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        records.append(
            {"path": path, "shape": list(t.data.shape), "offset": offset, "count": t.data.size}
        )
        blobs.append(blob)
        offset += t.data.size
    manifest = {
        "epoch": epoch,
        "seed": seed,
        "hyperparameters": hyperparameters,
        "params": records,
    }
    (directory / PARAMS_NAME).write_bytes(b"".join(blobs))
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return directory


def load_checkpoint(directory: str | Path) -> tuple[ParamStore, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    raw = np.frombuffer((directory / PARAMS_NAME).read_bytes(), dtype="<f8")
    expected = sum(rec["count"] for rec in manifest["params"])
    if raw.size != expected:
        raise ValueError(
            f"checkpoint {directory}: params.bin holds {raw.size} doubles, manifest expects {expected}"
        )
    store = ParamStore()
    for rec in manifest["params"]:
        chunk = raw[rec["offset"] : rec["offset"] + rec["count"]]
        store.add(rec["path"], chunk.reshape(rec["shape"]).astype(np.float64))
    return store, manifest
