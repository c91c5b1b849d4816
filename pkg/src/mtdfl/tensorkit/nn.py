"""Dense feed-forward kernels with hand-written backward passes.

Everything operates on 2-D float64 arrays shaped (batch, features). The
networks here are tiny (hidden widths 5..16), so clarity of the gradient
code wins over throughput tricks.
"""

from __future__ import annotations

import numpy as np

from ..errors import AggregationError, TrainingError

Activation = str  # "identity" | "relu" | "softmax"

_ACTIVATIONS = ("identity", "relu", "softmax")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, computed with max subtraction for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean of squared differences over all elements."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise AggregationError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (pred - target) / pred.size


# Probabilities are floored before log() so a confident-and-wrong
# prediction yields a large finite loss instead of inf.
_LOG_FLOOR = 1e-12


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class.

    `probs` is (batch, classes) of class probabilities, `labels` an int
    vector of class indices.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, _LOG_FLOOR))))


def cross_entropy_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    grad = np.zeros_like(probs)
    picked = np.maximum(probs[np.arange(len(labels)), labels], _LOG_FLOOR)
    grad[np.arange(len(labels)), labels] = -1.0 / (picked * len(labels))
    return grad


def init_matrix(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weight init."""
    scale = np.sqrt(1.0 / fan_in)
    return rng.uniform(-scale, scale, size=(fan_in, fan_out))


class DenseLayer:
    """Affine map plus one of the fixed activations."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, activation: Activation):
        if activation not in _ACTIVATIONS:
            raise AggregationError(f"unknown activation {activation!r}")
        weight = np.asarray(weight, dtype=float)
        bias = np.asarray(bias, dtype=float)
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise AggregationError(
                f"layer shapes inconsistent: W{weight.shape}, b{bias.shape}"
            )
        self.weight = weight
        self.bias = bias
        self.activation = activation

    @classmethod
    def new(
        cls,
        rng: np.random.Generator,
        fan_in: int,
        fan_out: int,
        activation: Activation,
    ) -> "DenseLayer":
        return cls(init_matrix(rng, fan_in, fan_out), np.zeros(fan_out), activation)

    @property
    def in_width(self) -> int:
        return self.weight.shape[0]

    @property
    def out_width(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: np.ndarray):
        pre = x @ self.weight + self.bias
        if self.activation == "identity":
            out = pre
        elif self.activation == "relu":
            out = relu(pre)
        else:
            out = softmax(pre)
        return out, (x, pre, out)

    def backward(self, cache, dout: np.ndarray):
        x, pre, out = cache
        if self.activation == "identity":
            dpre = dout
        elif self.activation == "relu":
            dpre = dout * (pre > 0.0)
        else:
            # Softmax Jacobian applied row-wise: ds = s * (dout - <dout, s>).
            dot = np.sum(dout * out, axis=1, keepdims=True)
            dpre = out * (dout - dot)
        dw = x.T @ dpre
        db = dpre.sum(axis=0)
        dx = dpre @ self.weight.T
        return {"weight": dw, "bias": db}, dx


class DenseNet:
    """A chain of DenseLayers with matching widths."""

    def __init__(self, layers: list[DenseLayer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_width != nxt.in_width:
                raise AggregationError(
                    f"layer widths do not chain: {prev.out_width} -> {nxt.in_width}"
                )
        self.layers = layers

    @classmethod
    def new(
        cls,
        rng: np.random.Generator,
        widths: list[int],
        activations: list[Activation],
    ) -> "DenseNet":
        if len(widths) != len(activations) + 1:
            raise AggregationError("need one activation per layer")
        layers = [
            DenseLayer.new(rng, widths[i], widths[i + 1], activations[i])
            for i in range(len(activations))
        ]
        return cls(layers)

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @property
    def out_width(self) -> int:
        return self.layers[-1].out_width

    def param_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.weight"] = layer.weight
            out[f"layer{i}.bias"] = layer.bias
        return out

    def load_param_dict(self, params: dict[str, np.ndarray]) -> None:
        own = self.param_dict()
        if set(own) != set(params):
            raise AggregationError("parameter names do not match this network")
        for name, value in params.items():
            if own[name].shape != value.shape:
                raise AggregationError(
                    f"shape mismatch for {name}: {own[name].shape} vs {value.shape}"
                )
            own[name][...] = value

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise AggregationError(
                f"input shape {x.shape} incompatible with width {self.in_width}"
            )
        caches = []
        out = x
        for layer in self.layers:
            out, cache = layer.forward(out)
            caches.append(cache)
        return out, caches

    def predict(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward(x)
        return out

    def backward(self, caches, dout: np.ndarray):
        grads: dict[str, np.ndarray] = {}
        dx = dout
        for i in reversed(range(len(self.layers))):
            layer_grads, dx = self.layers[i].backward(caches[i], dx)
            grads[f"layer{i}.weight"] = layer_grads["weight"]
            grads[f"layer{i}.bias"] = layer_grads["bias"]
        return grads, dx


def check_finite_grads(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
