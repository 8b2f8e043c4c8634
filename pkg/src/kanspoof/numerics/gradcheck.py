"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor, backward, no_grad


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    params: Iterable[Tensor] = (),
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error for one coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    Gradients are checked with respect to ``x`` and every tensor in
    ``params``.  ``max_coords`` caps the number of probed coordinates per
    tensor (chosen with ``rng``); ``None`` probes them all.
    """
    targets = [x, *params]
    saved = [(t.requires_grad, t.grad) for t in targets]
    for t in targets:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    try:
        backward(f(x))
        analytic = [t.grad.copy() for t in targets]
        worst = 0.0
        for t, grad in zip(targets, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
            for i in idx:
                orig = flat[i]
                with no_grad():
                    flat[i] = orig + h
                    up = f(x).item()
                    flat[i] = orig - h
                    down = f(x).item()
                flat[i] = orig
                num = (up - down) / (2 * h)
                ana = grad.reshape(-1)[i]
                worst = max(worst, abs(ana - num) / max(1.0, abs(ana)))
        return worst
    finally:
        for t, (req, g) in zip(targets, saved):
            t.requires_grad = req
            t.grad = g
