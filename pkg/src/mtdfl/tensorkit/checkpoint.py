"""Versioned JSON checkpoints: a shape header plus row-major parameter data."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

FORMAT = "mtdfl-checkpoint"
VERSION = 1


def save_params(path, kind: str, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    arrays = []
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=float)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"array {name} contains non-finite values")
        arrays.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "data": arr.ravel(order="C").tolist(),
            }
        )
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "meta": meta or {},
        "arrays": arrays,
    }
    Path(path).write_text(json.dumps(doc))


def load_params(path, expect_kind: str | None = None):
    """Returns (kind, meta, name->array). Rejects malformed headers."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    kind = doc.get("kind", "")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"expected a {expect_kind!r} checkpoint, found {kind!r}")
    params: dict[str, np.ndarray] = {}
    for entry in doc.get("arrays", []):
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=float)
        expected = int(np.prod(shape)) if shape else 1
        if data.size != expected:
            raise CheckpointError(
                f"array {entry['name']}: {data.size} values for shape {shape}"
            )
        params[entry["name"]] = data.reshape(shape)
    return kind, doc.get("meta", {}), params
