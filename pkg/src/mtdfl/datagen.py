"""Synthetic flow/traffic generators and the trace CSV loader.

Flow classification data comes from two unit-variance Gaussian families
`separation` apart along the all-ones direction; the benign family sits
at the origin (asymmetric on purpose: a sign-flipped classifier must not
keep its decisions). Traffic events use the same trick: benign events
are standard normal, and an attack flow drifts linearly toward a shifted
family over its window+1 events, with only the final event labeled as
the attack occurrence. The `snr` knob scales the shift; 0 makes the
families indistinguishable.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .anticipator import EventSequence, WindowedDataset, pool_windows
from .errors import TraceParseError
from .flengine import DeviceShard


def _class_shift(feature_width: int, magnitude: float) -> np.ndarray:
    # Unit direction along all-ones, scaled to the requested distance.
    return np.full(feature_width, magnitude / np.sqrt(feature_width))


def gen_synthetic_flows(
    n: int,
    feature_width: int,
    class_balance: float,
    rng: np.random.Generator,
    separation: float = 4.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Binary-labeled flow features; returns (x, y)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    y = (rng.random(n) < class_balance).astype(int)
    shift = _class_shift(feature_width, separation)
    x = rng.normal(size=(n, feature_width))
    x += np.where(y[:, None] == 1, shift, 0.0)
    return x, y


def make_test_shard(
    n: int, feature_width: int, class_balance: float, rng: np.random.Generator,
    separation: float = 4.0,
) -> DeviceShard:
    x, y = gen_synthetic_flows(n, feature_width, class_balance, rng, separation)
    return DeviceShard(device_id=-1, x=x, y=y)


def gen_benign_events(
    n_events: int, feature_width: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    return rng.normal(size=(n_events, feature_width)), np.zeros(n_events, dtype=int)


def gen_attack_flow(
    feature_width: int,
    rng: np.random.Generator,
    snr: float = 3.0,
    window: int = 10,
) -> tuple[np.ndarray, np.ndarray]:
    """One window+1 event flow drifting toward the attack family.

    Every event is benign-labeled except the last, so a sliding window
    over the flow anticipates the attack from the drift alone.
    """
    length = window + 1
    drift = (np.arange(1, length + 1) / length)[:, None]
    base = rng.normal(size=(length, feature_width))
    features = base + drift * _class_shift(feature_width, snr)
    labels = np.zeros(length, dtype=int)
    labels[-1] = 1
    return features, labels


def gen_synthetic_traffic(
    n_benign: int,
    n_attack_flows: int,
    feature_width: int,
    rng: np.random.Generator,
    snr: float = 3.0,
    window: int = 10,
) -> list[EventSequence]:
    """Training sequences: window+1 events each, one window row per sequence."""
    logs = []
    length = window + 1
    for i in range(n_benign):
        feats, labels = gen_benign_events(length, feature_width, rng)
        logs.append(EventSequence(i, feats, labels))
    for i in range(n_attack_flows):
        feats, labels = gen_attack_flow(feature_width, rng, snr, window)
        logs.append(EventSequence(n_benign + i, feats, labels))
    return logs


def traffic_dataset(
    n_per_class: int,
    feature_width: int,
    rng: np.random.Generator,
    snr: float = 3.0,
    window: int = 10,
) -> WindowedDataset:
    logs = gen_synthetic_traffic(n_per_class, n_per_class, feature_width, rng, snr, window)
    return pool_windows(logs, window)


def load_trace_csv(path, schema: str):
    """Load a flows or events trace.

    flows: feature columns plus a trailing/named `label` column; returns
    (x, y) arrays. events: `device_id`, `timestamp`, feature columns,
    `label`; returns EventSequence list ordered by device then time.
    Malformed rows raise TraceParseError naming the line.
    """
    if schema not in ("flows", "events"):
        raise TraceParseError(f"unknown schema {schema!r}")
    path = Path(path)
    if not path.exists():
        raise TraceParseError(f"{path} does not exist")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceParseError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if "label" not in header:
            raise TraceParseError(f"{path}: header has no 'label' column")
        label_col = header.index("label")
        meta_cols = {}
        if schema == "events":
            for required in ("device_id", "timestamp"):
                if required not in header:
                    raise TraceParseError(f"{path}: header has no '{required}' column")
                meta_cols[required] = header.index(required)
        feature_cols = [
            i for i in range(len(header)) if i != label_col and i not in meta_cols.values()
        ]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise TraceParseError(
                    f"{path}:{line_no}: expected {len(header)} columns, found {len(row)}"
                )
            try:
                features = [float(row[i]) for i in feature_cols]
                label = int(float(row[label_col]))
                meta = {k: float(row[i]) for k, i in meta_cols.items()}
            except ValueError as exc:
                raise TraceParseError(f"{path}:{line_no}: {exc}") from exc
            rows.append((meta, features, label))

    if schema == "flows":
        if not rows:
            import warnings

            warnings.warn(f"{path} contains a header but no rows", stacklevel=2)
            return np.zeros((0, len(feature_cols))), np.zeros(0, dtype=int)
        x = np.array([r[1] for r in rows])
        y = np.array([r[2] for r in rows], dtype=int)
        return x, y

    if not rows:
        import warnings

        warnings.warn(f"{path} contains a header but no rows", stacklevel=2)
        return []
    by_device: dict[int, list] = {}
    for meta, features, label in rows:
        by_device.setdefault(int(meta["device_id"]), []).append(
            (meta["timestamp"], features, label)
        )
    sequences = []
    for device_id in sorted(by_device):
        entries = sorted(by_device[device_id], key=lambda e: e[0])
        feats = np.array([e[1] for e in entries])
        labels = np.array([e[2] for e in entries], dtype=int)
        sequences.append(EventSequence(device_id, feats, labels))
    return sequences
