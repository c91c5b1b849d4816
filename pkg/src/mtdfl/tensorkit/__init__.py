"""Minimal neural kernels sized for this project's tiny networks.

Dense chains, GRU/LSTM cells with backprop through time, MSE and
cross-entropy losses, SGD/Adam, a finite-difference gradient checker,
and a versioned checkpoint format. All math is float64 numpy.
"""

from .checkpoint import load_params, save_params
from .gradcheck import grad_check
from .nn import (
    DenseLayer,
    DenseNet,
    check_finite_grads,
    cross_entropy_grad,
    cross_entropy_loss,
    init_matrix,
    mse_grad,
    mse_loss,
    relu,
    softmax,
)
from .optim import Adam, Sgd, make_optimizer
from .rnn import GruCell, LstmCell, RecurrentClassifier, sigmoid

__all__ = [
    "Adam",
    "DenseLayer",
    "DenseNet",
    "GruCell",
    "LstmCell",
    "RecurrentClassifier",
    "Sgd",
    "check_finite_grads",
    "cross_entropy_grad",
    "cross_entropy_loss",
    "grad_check",
    "init_matrix",
    "load_params",
    "make_optimizer",
    "mse_grad",
    "mse_loss",
    "relu",
    "save_params",
    "sigmoid",
    "softmax",
]


def dense_forward(net: DenseNet, x):
    """Forward pass returning outputs only."""
    return net.predict(x)


def gru_step(cell: GruCell, h, x):
    """One GRU transition; returns the new hidden state."""
    h_new, _ = cell.step(x, h)
    return h_new


def backward_and_step(model, caches, dout, opt) -> None:
    """Backprop `dout` through `model` and apply one optimizer update."""
    result = model.backward(caches, dout)
    grads = result[0] if isinstance(result, tuple) else result
    opt.step(model.param_dict(), grads)
