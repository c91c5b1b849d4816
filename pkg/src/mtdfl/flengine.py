"""Federated rounds: local training, two-tier weighted averaging, evaluation.

The task model is a small dense classifier over flow-feature vectors.
Model weights travel as flat vectors (ModelParams) so aggregation and
poisoning are plain vector arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorkit as tk
from .errors import AggregationError

Layout = tuple  # ((in_width, out_width, activation), ...)


@dataclass
class ModelParams:
    """Flat parameter vector plus the dense-layer layout it unpacks into."""

    vector: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        expected = sum(w_in * w_out + w_out for w_in, w_out, _ in self.layout)
        if self.vector.ndim != 1 or self.vector.size != expected:
            raise AggregationError(
                f"vector length {self.vector.size} does not match layout ({expected})"
            )

    @property
    def size(self) -> int:
        return int(self.vector.size)

    def copy(self) -> "ModelParams":
        return ModelParams(self.vector.copy(), self.layout)

    def to_net(self) -> tk.DenseNet:
        layers = []
        offset = 0
        for w_in, w_out, act in self.layout:
            w = self.vector[offset : offset + w_in * w_out].reshape(w_in, w_out)
            offset += w_in * w_out
            b = self.vector[offset : offset + w_out]
            offset += w_out
            layers.append(tk.DenseLayer(w.copy(), b.copy(), act))
        return tk.DenseNet(layers)

    @classmethod
    def from_net(cls, net: tk.DenseNet) -> "ModelParams":
        layout = tuple(
            (layer.in_width, layer.out_width, layer.activation) for layer in net.layers
        )
        chunks = []
        for layer in net.layers:
            chunks.append(layer.weight.ravel(order="C"))
            chunks.append(layer.bias)
        return cls(np.concatenate(chunks), layout)


def init_task_model(
    rng: np.random.Generator, feature_width: int, hidden_width: int, n_classes: int = 2
) -> ModelParams:
    """Dense softmax classifier; hidden_width=0 gives the linear model."""
    if hidden_width == 0:
        net = tk.DenseNet.new(rng, [feature_width, n_classes], ["softmax"])
    else:
        net = tk.DenseNet.new(
            rng,
            [feature_width, hidden_width, n_classes],
            ["relu", "softmax"],
        )
    return ModelParams.from_net(net)


@dataclass
class DeviceShard:
    device_id: int
    x: np.ndarray  # (n, features)
    y: np.ndarray  # (n,) int labels

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if len(self.x) != len(self.y):
            raise AggregationError("shard features and labels must align")

    @property
    def size(self) -> int:
        return len(self.y)


@dataclass
class RoundResult:
    """What one federated iteration produced."""

    uploads: dict[int, ModelParams] = field(default_factory=dict)  # device id -> params
    upload_counts: dict[int, int] = field(default_factory=dict)
    local_losses: dict[int, float] = field(default_factory=dict)
    global_params: ModelParams | None = None
    accuracy: float = 0.0
    test_loss: float = 0.0


def _loss_and_grad(kind: str, probs: np.ndarray, labels: np.ndarray):
    if kind == "cross_entropy":
        return tk.cross_entropy_loss(probs, labels), tk.cross_entropy_grad(probs, labels)
    if kind == "mse":
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(labels)), labels] = 1.0
        return tk.mse_loss(probs, onehot), tk.mse_grad(probs, onehot)
    raise AggregationError(f"unknown loss kind {kind!r}")


def eval_loss(kind: str, probs: np.ndarray, labels: np.ndarray) -> float:
    loss, _ = _loss_and_grad(kind, probs, labels)
    return loss


def local_train(
    global_params: ModelParams,
    shard: DeviceShard,
    epochs: int,
    rng: np.random.Generator,
    learning_rate: float = 0.05,
    batch_size: int = 32,
    optimizer: str = "sgd",
    loss: str = "cross_entropy",
) -> tuple[ModelParams, float]:
    """Train from the global model on one shard; returns (params, final-epoch loss).

    With epochs=0 the parameters pass through and the loss is simply the
    global model evaluated on the shard.
    """
    if shard.size == 0:
        raise AggregationError("cannot train on an empty shard")
    net = global_params.to_net()
    if epochs == 0:
        probs = net.predict(shard.x)
        return global_params.copy(), eval_loss(loss, probs, shard.y)

    opt = tk.make_optimizer(optimizer, learning_rate)
    last_epoch_loss = 0.0
    for _ in range(epochs):
        order = rng.permutation(shard.size)
        losses = []
        for start in range(0, shard.size, batch_size):
            idx = order[start : start + batch_size]
            probs, caches = net.forward(shard.x[idx])
            value, dprobs = _loss_and_grad(loss, probs, shard.y[idx])
            losses.append(value)
            grads, _ = net.backward(caches, dprobs)
            opt.step(net.param_dict(), grads)
        last_epoch_loss = float(np.mean(losses))
    return ModelParams.from_net(net), last_epoch_loss


def _check_same_shape(models: list[ModelParams]) -> None:
    first = models[0]
    for m in models[1:]:
        if m.layout != first.layout or m.size != first.size:
            raise AggregationError("cannot aggregate models with different layouts")


def _weighted_mean(vectors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # Deviation-from-first form: exact when all vectors coincide.
    base = vectors[0]
    deviations = vectors - base
    return base + (weights[:, None] * deviations).sum(axis=0) / weights.sum()


def aggregate_partial(
    uploads: list[tuple[ModelParams, int]],
    weighted: bool = True,
) -> tuple[ModelParams, int]:
    """Data-size-weighted mean of uploads; carries the combined count upward.

    Unweighted mode averages plainly but still reports the upload count,
    so the cloud tier reproduces the flat unweighted mean.
    """
    if not uploads:
        raise AggregationError("aggregate_partial needs at least one upload")
    models = [m for m, _ in uploads]
    _check_same_shape(models)
    counts = [c for _, c in uploads]
    weights = np.asarray(counts if weighted else [1] * len(uploads), dtype=float)
    if weights.sum() <= 0:
        raise AggregationError("total aggregation weight must be positive")
    stacked = np.stack([m.vector for m in models])
    mean = _weighted_mean(stacked, weights)
    carried = int(sum(counts)) if weighted else len(uploads)
    return ModelParams(mean, models[0].layout), carried


def aggregate_global(partials: list[tuple[ModelParams, int]]) -> ModelParams:
    """Count-weighted mean of the per-station partial models."""
    if not partials:
        raise AggregationError("aggregate_global needs at least one partial")
    models = [m for m, _ in partials]
    _check_same_shape(models)
    weights = np.asarray([c for _, c in partials], dtype=float)
    if weights.sum() <= 0:
        raise AggregationError("total aggregation weight must be positive")
    stacked = np.stack([m.vector for m in models])
    mean = _weighted_mean(stacked, weights)
    return ModelParams(mean, models[0].layout)


def evaluate(
    params: ModelParams, test: DeviceShard, loss: str = "cross_entropy"
) -> tuple[float, float]:
    """Classification accuracy and mean loss on the test shard."""
    if test.size == 0:
        raise AggregationError("cannot evaluate on an empty shard")
    probs = params.to_net().predict(test.x)
    predicted = probs.argmax(axis=1)
    accuracy = float(np.mean(predicted == test.y))
    return accuracy, eval_loss(loss, probs, test.y)


def label_flow(packet_labels: list[bool], threshold: float = 0.7) -> bool:
    """A flow is malicious when its malicious-packet ratio strictly exceeds the threshold."""
    if not packet_labels:
        raise AggregationError("flow must contain at least one packet")
    ratio = sum(bool(p) for p in packet_labels) / len(packet_labels)
    return ratio > threshold
