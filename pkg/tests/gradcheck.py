"""Central finite-difference oracle shared by the gradient tests."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from text2table.autodiff import Tape, Tensor


def num_grad(
    func: Callable[[], float],
    x: np.ndarray,
    delta: float = 1e-5,
    coords: Sequence[tuple[int, ...]] | None = None,
) -> np.ndarray:
    """Central differences of func() w.r.t. entries of x (mutated in place).

    func must read x's current contents on every call.  Returns an array
    shaped like x; with `coords`, only those entries are filled (others 0).
    """
    grad = np.zeros_like(x)
    index_iter = coords if coords is not None else np.ndindex(*x.shape)
    for index in index_iter:
        index = tuple(index)
        keep = x[index]
        x[index] = keep + delta
        plus = func()
        x[index] = keep - delta
        minus = func()
        x[index] = keep
        grad[index] = (plus - minus) / (2.0 * delta)
    return grad


def max_rel_err(
    analytic: np.ndarray,
    numeric: np.ndarray,
    floor: float = 1e-8,
    abs_tol: float = 1e-8,
) -> float:
    """Worst relative disagreement; values within abs_tol agree outright.

    The absolute short-circuit matters for coordinates whose true gradient
    is ~0 (e.g. a key-projection bias, which softmax is invariant to):
    there the central-difference value is pure floating-point noise and a
    relative comparison would amplify it.
    """
    diff = np.abs(np.asarray(analytic) - np.asarray(numeric))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.where(diff <= abs_tol, 0.0, diff / denom)
    return float(np.max(rel))


def check_grads(
    loss_fn: Callable[[], "Tensor"],
    tensors: Sequence[Tensor],
    delta: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Backprop loss_fn once, then FD-check every tensor; returns worst rel err.

    With max_coords, at most that many randomly chosen coordinates are
    checked per tensor (all of them when the tensor is small enough).
    """
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(tensors, analytic):
        coords = None
        total = int(np.prod(t.data.shape)) if t.data.shape else 1
        if max_coords is not None and total > max_coords:
            flat = rng.choice(total, size=max_coords, replace=False)
            coords = [np.unravel_index(i, t.data.shape) for i in flat]
        numeric = num_grad(lambda: loss_fn().item(), t.data, delta=delta, coords=coords)
        if coords is None:
            worst = max(worst, max_rel_err(a, numeric))
        else:
            for index in coords:
                worst = max(
                    worst,
                    max_rel_err(a[tuple(index)], numeric[tuple(index)]),
                )
    return worst
