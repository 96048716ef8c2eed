from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .params import ParamStore
from .tensor import Tensor, backward


class NonDeterministicError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def worst(self) -> tuple[str, float]:
        if not self.errors:
            return ("", 0.0)
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    def passed(self, tolerance: float) -> bool:
        return all(e <= tolerance for e in self.errors.values())


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def analytic_grads(f: Callable[[ParamStore], Tensor], store: ParamStore) -> dict[str, np.ndarray]:
    store.zero_grad()
    loss = f(store)
    if loss.data.size != 1:
        raise ValueError("function must return a scalar")
    backward(loss)
    return store.grads()


def finite_diff_check(f: Callable[[ParamStore], Tensor], store: ParamStore, h: float = 1e-5,
                      names: Iterable[str] | None = None, max_coords: int | None = None,
                      seed: int = 0,
                      grads: dict[str, np.ndarray] | None = None) -> GradCheckReport:
    """Compare tape gradients of ``f`` with central differences.

    ``max_coords`` caps how many coordinates per parameter are probed
    (chosen with a seeded RNG); ``None`` probes all of them. ``grads`` lets a
    caller supply the analytic side (used for fault injection).
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError("step h must lie in [1e-6, 1e-4]")
    base = float(f(store).data)
    if float(f(store).data) != base:
        raise NonDeterministicError("function returned different values on repeated evaluation")
    if grads is None:
        grads = analytic_grads(f, store)

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name in (store.names() if names is None else list(names)):
        p = store[name].data
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        g = grads[name].reshape(-1)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(store).data)
            flat[i] = orig - h
            fm = float(f(store).data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            worst = max(worst, float(relative_error(g[i], num)))
        report.errors[name] = worst
        report.checked[name] = len(coords)
    return report
