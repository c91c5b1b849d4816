"""Traffic-driven anticipation of which devices will turn Byzantine.

Per-device security-event logs are cut into sliding windows: the L
events before time t predict the label of the event at t. A recurrent
classifier (GRU or LSTM) trained on those windows yields, for each
device, the probability that its next event is an attack; that vector
is the anticipation profile the defense consumes.

Besides the trained predictor there are two truth-wired stand-ins used
by experiments and tests: a perfect oracle and a noisy oracle that flips
the true compromise bit at configured false-positive/negative rates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensorkit as tk
from .errors import AggregationError, InsufficientHistoryError


@dataclass
class EventSequence:
    """Chronological security events of one device."""

    device_id: int
    features: np.ndarray  # (t, width)
    labels: np.ndarray  # (t,) 0 benign / 1 attack

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise AggregationError("event features and labels must align")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def extended(self, features: np.ndarray, labels: np.ndarray) -> "EventSequence":
        features = np.asarray(features, dtype=float)
        if features.shape[1] != self.width:
            raise AggregationError(
                f"appended events have width {features.shape[1]}, log has {self.width}"
            )
        return EventSequence(
            self.device_id,
            np.concatenate([self.features, features]),
            np.concatenate([self.labels, np.asarray(labels, dtype=int)]),
        )

    def tail_window(self, length: int) -> np.ndarray:
        if len(self) < length:
            raise InsufficientHistoryError(
                f"device {self.device_id} log has {len(self)} events, window needs {length}"
            )
        return self.features[-length:]


@dataclass
class WindowedDataset:
    x: np.ndarray  # (rows, L, width)
    y: np.ndarray  # (rows,)
    window: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.x.ndim != 3 or len(self.x) != len(self.y):
            raise AggregationError("windowed dataset arrays must align")

    def __len__(self) -> int:
        return len(self.y)

    def concat(self, other: "WindowedDataset") -> "WindowedDataset":
        if other.window != self.window:
            raise AggregationError("cannot concatenate datasets with different windows")
        return WindowedDataset(
            np.concatenate([self.x, other.x]),
            np.concatenate([self.y, other.y]),
            self.window,
        )


@dataclass
class AnticipationProfile:
    probs: np.ndarray  # (N,) in [0, 1], index-aligned with the device list
    iteration: int

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise AggregationError("anticipation probabilities must lie in [0, 1]")


def build_windows(log: EventSequence, window: int) -> WindowedDataset:
    """All t-L sliding rows: events k..k+L-1 predict the label at k+L."""
    t = len(log)
    if t <= window:
        raise InsufficientHistoryError(
            f"log of length {t} cannot produce windows of length {window}"
        )
    rows = t - window
    x = np.stack([log.features[k : k + window] for k in range(rows)])
    y = log.labels[window:]
    return WindowedDataset(x, y.copy(), window)


def pool_windows(logs: list[EventSequence], window: int) -> WindowedDataset:
    parts = [build_windows(log, window) for log in logs if len(log) > window]
    if not parts:
        raise InsufficientHistoryError("no log is long enough for the window")
    out = parts[0]
    for p in parts[1:]:
        out = out.concat(p)
    return out


class RecurrentPredictor:
    """Trained recurrent window classifier plus its fallback prior."""

    def __init__(self, model: tk.RecurrentClassifier, window: int, prior: float):
        self.model = model
        self.window = window
        self.prior = float(prior)

    def window_proba(self, x: np.ndarray) -> float:
        """Attack-class probability for one (L, width) window."""
        probs = self.model.predict_proba(x[None, :, :])
        return float(probs[0, 1])

    def sequence_proba(self, log: EventSequence) -> float:
        """Probability from the last L events; prior when history is short."""
        if len(log) < self.window:
            return self.prior
        return self.window_proba(log.tail_window(self.window))

    def batch_proba(self, x: np.ndarray) -> np.ndarray:
        return self.model.predict_proba(x)[:, 1]

    def save(self, path) -> None:
        tk.save_params(
            path,
            kind="anticipator",
            params=self.model.param_dict(),
            meta={
                "arch": self.model.arch,
                "input_width": self.model.cell.input_width,
                "hidden_width": self.model.cell.hidden_width,
                "window": self.window,
                "prior": self.prior,
            },
        )

    @classmethod
    def load(cls, path) -> "RecurrentPredictor":
        _, meta, params = tk.load_params(path, expect_kind="anticipator")
        model = tk.RecurrentClassifier.new(
            np.random.default_rng(0),
            meta["arch"],
            int(meta["input_width"]),
            int(meta["hidden_width"]),
        )
        model.load_param_dict(params)
        return cls(model, int(meta["window"]), float(meta["prior"]))


class OraclePredictor:
    """Truth-wired stand-in: p=1 for currently compromised devices, else 0."""

    def __init__(self, compromised: set[int] | None = None):
        self.compromised = set(compromised or ())

    def update(self, compromised) -> None:
        self.compromised = set(compromised)

    def sequence_proba(self, log: EventSequence) -> float:
        return 1.0 if log.device_id in self.compromised else 0.0


class NoisyOracle:
    """Oracle that flips the true compromise bit with configured FP/FN rates."""

    def __init__(self, fp: float, fn: float, rng: np.random.Generator, compromised=None):
        if not (0 <= fp <= 1 and 0 <= fn <= 1):
            raise AggregationError("fp and fn must be rates in [0, 1]")
        self.fp = fp
        self.fn = fn
        self.rng = rng
        self.compromised = set(compromised or ())

    def update(self, compromised) -> None:
        self.compromised = set(compromised)

    def flip(self, truth: bool) -> float:
        if truth:
            return 0.0 if self.rng.random() < self.fn else 1.0
        return 1.0 if self.rng.random() < self.fp else 0.0

    def sequence_proba(self, log: EventSequence) -> float:
        return self.flip(log.device_id in self.compromised)


def train_anticipator(
    dataset: WindowedDataset,
    arch: str = "gru",
    hidden: int = 8,
    epochs: int = 30,
    rng: np.random.Generator | None = None,
    learning_rate: float = 5e-3,
    batch_size: int = 32,
    loss: str = "mse",
) -> RecurrentPredictor:
    """Fit the recurrent window classifier with Adam.

    The two-class softmax output is trained against one-hot targets with
    a mean-square objective by default; cross-entropy is available.
    """
    if len(dataset) == 0:
        raise InsufficientHistoryError("cannot train on an empty dataset")
    classes = np.unique(dataset.y)
    if len(classes) < 2:
        warnings.warn(
            "training data contains a single class; calibration will be untested",
            stacklevel=2,
        )
    rng = rng or np.random.default_rng(0)
    model = tk.RecurrentClassifier.new(
        rng, arch, input_width=dataset.x.shape[2], hidden_width=hidden
    )
    opt = tk.Adam(learning_rate)
    n = len(dataset)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            probs, cache = model.forward(dataset.x[idx])
            labels = dataset.y[idx]
            if loss == "mse":
                onehot = np.zeros_like(probs)
                onehot[np.arange(len(labels)), labels] = 1.0
                dprobs = tk.mse_grad(probs, onehot)
            elif loss == "cross_entropy":
                dprobs = tk.cross_entropy_grad(probs, labels)
            else:
                raise AggregationError(f"unknown loss kind {loss!r}")
            grads = model.backward(cache, dprobs)
            opt.step(model.param_dict(), grads)
    prior = float(dataset.y.mean())
    return RecurrentPredictor(model, dataset.window, prior)


def anticipate(
    predictor,
    logs: list[EventSequence],
    window: int,
    iteration: int,
) -> AnticipationProfile:
    """Per-device probability of the next event being an attack."""
    probs = np.array([predictor.sequence_proba(log) for log in logs])
    return AnticipationProfile(probs=np.clip(probs, 0.0, 1.0), iteration=iteration)


def evaluate_anticipator(
    predictor: RecurrentPredictor,
    test: WindowedDataset,
    threshold: float = 0.5,
) -> tuple[float, float, float]:
    """(accuracy, FP rate, FN rate) on a windowed test set."""
    if len(test) == 0:
        raise InsufficientHistoryError("cannot evaluate on an empty dataset")
    scores = predictor.batch_proba(test.x)
    predicted = (scores >= threshold).astype(int)
    correct = predicted == test.y
    accuracy = float(correct.mean())
    benign = test.y == 0
    attack = test.y == 1
    fp = float(predicted[benign].mean()) if benign.any() else 0.0
    fn = float((1 - predicted[attack]).mean()) if attack.any() else 0.0
    return accuracy, fp, fn
