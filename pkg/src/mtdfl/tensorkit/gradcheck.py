"""Finite-difference gradient verification for the hand-written backward passes."""

from __future__ import annotations

import numpy as np


def grad_check(
    params: dict[str, np.ndarray],
    loss_fn,
    grads: dict[str, np.ndarray],
    h: float = 1e-5,
) -> float:
    """Max relative error between `grads` and central finite differences.

    `loss_fn` must recompute the scalar loss from the live `params`
    arrays; every element is perturbed in place by +/-h. Intended for
    small models only (cost is two loss evaluations per parameter).
    """
    worst = 0.0
    for name, p in params.items():
        g = grads[name]
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            lo_hi = loss_fn()
            p[idx] = orig - h
            lo_lo = loss_fn()
            p[idx] = orig
            numeric = (lo_hi - lo_lo) / (2.0 * h)
            analytic = g[idx]
            denom = max(abs(numeric), abs(analytic))
            if denom < 1e-6:
                err = abs(numeric - analytic)
            else:
                err = abs(numeric - analytic) / denom
            worst = max(worst, err)
            it.iternext()
    return worst
