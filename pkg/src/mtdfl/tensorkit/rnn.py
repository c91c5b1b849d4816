"""Gated recurrent cells with backprop through time.

Gate convention for the GRU (pinned by the zero-weight fixture in the
tests, since several equivalent formulations exist):

    z = sigmoid(x Wz + h Uz + bz)
    r = sigmoid(x Wr + h Ur + br)
    c = tanh(x Wh + (r*h) Uh + bh)
    h' = (1 - z) * h + z * c

The LSTM uses the standard i/f/o/g gates with tanh cell activation.
Arrays are (batch, width); a sequence input is (batch, steps, width).
"""

from __future__ import annotations

import numpy as np

from ..errors import AggregationError
from .nn import DenseLayer, init_matrix


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp().
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class GruCell:
    def __init__(self, params: dict[str, np.ndarray], input_width: int, hidden_width: int):
        self.input_width = input_width
        self.hidden_width = hidden_width
        expected = {
            "wz": (input_width, hidden_width),
            "uz": (hidden_width, hidden_width),
            "bz": (hidden_width,),
            "wr": (input_width, hidden_width),
            "ur": (hidden_width, hidden_width),
            "br": (hidden_width,),
            "wh": (input_width, hidden_width),
            "uh": (hidden_width, hidden_width),
            "bh": (hidden_width,),
        }
        for name, shape in expected.items():
            if name not in params or params[name].shape != shape:
                raise AggregationError(f"gru parameter {name} must have shape {shape}")
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}

    @classmethod
    def new(cls, rng: np.random.Generator, input_width: int, hidden_width: int) -> "GruCell":
        p = {}
        for gate in ("z", "r", "h"):
            p[f"w{gate}"] = init_matrix(rng, input_width, hidden_width)
            p[f"u{gate}"] = init_matrix(rng, hidden_width, hidden_width)
            p[f"b{gate}"] = np.zeros(hidden_width)
        return cls(p, input_width, hidden_width)

    def param_dict(self) -> dict[str, np.ndarray]:
        return self.params

    def step(self, x: np.ndarray, h: np.ndarray):
        p = self.params
        z = sigmoid(x @ p["wz"] + h @ p["uz"] + p["bz"])
        r = sigmoid(x @ p["wr"] + h @ p["ur"] + p["br"])
        rh = r * h
        c = np.tanh(x @ p["wh"] + rh @ p["uh"] + p["bh"])
        h_new = (1.0 - z) * h + z * c
        cache = (x, h, z, r, rh, c)
        return h_new, cache

    def backward_step(self, cache, dh_new: np.ndarray, grads: dict[str, np.ndarray]):
        """Accumulates parameter grads in place; returns (dx, dh)."""
        x, h, z, r, rh, c = cache
        p = self.params

        dz = dh_new * (c - h)
        dc = dh_new * z
        dh = dh_new * (1.0 - z)

        dah = dc * (1.0 - c * c)
        grads["wh"] += x.T @ dah
        grads["uh"] += rh.T @ dah
        grads["bh"] += dah.sum(axis=0)
        drh = dah @ p["uh"].T
        dr = drh * h
        dh += drh * r
        dx = dah @ p["wh"].T

        dar = dr * r * (1.0 - r)
        grads["wr"] += x.T @ dar
        grads["ur"] += h.T @ dar
        grads["br"] += dar.sum(axis=0)
        dx += dar @ p["wr"].T
        dh += dar @ p["ur"].T

        daz = dz * z * (1.0 - z)
        grads["wz"] += x.T @ daz
        grads["uz"] += h.T @ daz
        grads["bz"] += daz.sum(axis=0)
        dx += daz @ p["wz"].T
        dh += daz @ p["uz"].T
        return dx, dh


class LstmCell:
    """Standard LSTM; carried state is the (h, c) pair."""

    def __init__(self, params: dict[str, np.ndarray], input_width: int, hidden_width: int):
        self.input_width = input_width
        self.hidden_width = hidden_width
        for gate in ("i", "f", "o", "g"):
            for prefix, shape in (
                ("w", (input_width, hidden_width)),
                ("u", (hidden_width, hidden_width)),
                ("b", (hidden_width,)),
            ):
                name = f"{prefix}{gate}"
                if name not in params or params[name].shape != shape:
                    raise AggregationError(f"lstm parameter {name} must have shape {shape}")
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}

    @classmethod
    def new(cls, rng: np.random.Generator, input_width: int, hidden_width: int) -> "LstmCell":
        p = {}
        for gate in ("i", "f", "o", "g"):
            p[f"w{gate}"] = init_matrix(rng, input_width, hidden_width)
            p[f"u{gate}"] = init_matrix(rng, hidden_width, hidden_width)
            p[f"b{gate}"] = np.zeros(hidden_width)
        return cls(p, input_width, hidden_width)

    def param_dict(self) -> dict[str, np.ndarray]:
        return self.params

    def step(self, x: np.ndarray, state):
        h, c = state
        p = self.params
        i = sigmoid(x @ p["wi"] + h @ p["ui"] + p["bi"])
        f = sigmoid(x @ p["wf"] + h @ p["uf"] + p["bf"])
        o = sigmoid(x @ p["wo"] + h @ p["uo"] + p["bo"])
        g = np.tanh(x @ p["wg"] + h @ p["ug"] + p["bg"])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache = (x, h, c, i, f, o, g, tc)
        return (h_new, c_new), cache

    def backward_step(self, cache, dh_new: np.ndarray, dc_new: np.ndarray, grads):
        x, h, c, i, f, o, g, tc = cache
        p = self.params

        do = dh_new * tc
        dc = dc_new + dh_new * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c
        dc_prev = dc * f

        dx = np.zeros_like(x)
        dh = np.zeros_like(h)
        for gate, dgate, act in (
            ("i", di, i),
            ("f", df, f),
            ("o", do, o),
        ):
            da = dgate * act * (1.0 - act)
            grads[f"w{gate}"] += x.T @ da
            grads[f"u{gate}"] += h.T @ da
            grads[f"b{gate}"] += da.sum(axis=0)
            dx += da @ p[f"w{gate}"].T
            dh += da @ p[f"u{gate}"].T
        dag = dg * (1.0 - g * g)
        grads["wg"] += x.T @ dag
        grads["ug"] += h.T @ dag
        grads["bg"] += dag.sum(axis=0)
        dx += dag @ p["wg"].T
        dh += dag @ p["ug"].T
        return dx, dh, dc_prev


class RecurrentClassifier:
    """Recurrent cell unrolled over a window, with a softmax read-out head.

    Consumes (batch, steps, features), emits (batch, n_classes) class
    probabilities from the final hidden state.
    """

    def __init__(self, cell, head: DenseLayer):
        if head.in_width != cell.hidden_width:
            raise AggregationError("head width must equal the cell hidden width")
        self.cell = cell
        self.head = head

    @classmethod
    def new(
        cls,
        rng: np.random.Generator,
        arch: str,
        input_width: int,
        hidden_width: int,
        n_classes: int = 2,
    ) -> "RecurrentClassifier":
        arch = arch.lower()
        if arch == "gru":
            cell = GruCell.new(rng, input_width, hidden_width)
        elif arch == "lstm":
            cell = LstmCell.new(rng, input_width, hidden_width)
        else:
            raise AggregationError(f"unknown recurrent arch {arch!r}")
        head = DenseLayer.new(rng, hidden_width, n_classes, "softmax")
        return cls(cell, head)

    @property
    def arch(self) -> str:
        return "gru" if isinstance(self.cell, GruCell) else "lstm"

    def param_dict(self) -> dict[str, np.ndarray]:
        out = {f"cell.{k}": v for k, v in self.cell.param_dict().items()}
        out["head.weight"] = self.head.weight
        out["head.bias"] = self.head.bias
        return out

    def load_param_dict(self, params: dict[str, np.ndarray]) -> None:
        own = self.param_dict()
        if set(own) != set(params):
            raise AggregationError("parameter names do not match this classifier")
        for name, value in params.items():
            if own[name].shape != value.shape:
                raise AggregationError(
                    f"shape mismatch for {name}: {own[name].shape} vs {value.shape}"
                )
            own[name][...] = value

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[2] != self.cell.input_width:
            raise AggregationError(
                f"sequence input must be (batch, steps, {self.cell.input_width})"
            )
        batch, steps, _ = x.shape
        hidden = self.cell.hidden_width
        caches = []
        if isinstance(self.cell, GruCell):
            h = np.zeros((batch, hidden))
            for t in range(steps):
                h, cache = self.cell.step(x[:, t, :], h)
                caches.append(cache)
        else:
            state = (np.zeros((batch, hidden)), np.zeros((batch, hidden)))
            for t in range(steps):
                state, cache = self.cell.step(x[:, t, :], state)
                caches.append(cache)
            h = state[0]
        probs, head_cache = self.head.forward(h)
        return probs, (caches, head_cache, batch)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        probs, _ = self.forward(x)
        return probs

    def backward(self, cache, dprobs: np.ndarray) -> dict[str, np.ndarray]:
        caches, head_cache, batch = cache
        head_grads, dh = self.head.backward(head_cache, dprobs)
        cell_grads = {k: np.zeros_like(v) for k, v in self.cell.param_dict().items()}
        if isinstance(self.cell, GruCell):
            for step_cache in reversed(caches):
                _, dh = self.cell.backward_step(step_cache, dh, cell_grads)
        else:
            dc = np.zeros((batch, self.cell.hidden_width))
            for step_cache in reversed(caches):
                _, dh, dc = self.cell.backward_step(step_cache, dh, dc, cell_grads)
        grads = {f"cell.{k}": v for k, v in cell_grads.items()}
        grads["head.weight"] = head_grads["weight"]
        grads["head.bias"] = head_grads["bias"]
        return grads
