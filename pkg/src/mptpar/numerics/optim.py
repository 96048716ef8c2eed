from __future__ import annotations

import numpy as np

from .params import ParamStore
from .tensor import NonFiniteError


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One bias-corrected Adam update with decoupled weight decay.

    All gradients are validated before anything is written, so a bad
    gradient leaves the store exactly as it was.
    """
    for name, g in grads.items():
        if name not in store:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != store[name].shape:
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {store[name].shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")

    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        p = store[name].data
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
