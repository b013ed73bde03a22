"""Tensors, the gradient tape, and the grad-enabled/disabled contexts.

A Tape records every differentiable op in execution order; backward() walks
the records in exact reverse order, accumulating gradients additively into
each input.  Ops executed while no tape is active (or inside no_grad())
run as plain numpy with no recording, which is how gradient-free rollouts
and decoding reuse the same forward code bit for bit.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np


class NumericError(RuntimeError):
    """A forward value or gradient became NaN/Inf."""


class Tensor:
    """A float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        # Copy on first contribution: g may alias another tensor's buffer
        # (e.g. both sides of an add share one upstream gradient).
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


# Innermost entry wins; None disables recording (no_grad).
_TAPE_STACK: list[Optional["Tape"]] = []


def current_tape() -> Optional["Tape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class no_grad:
    """Context manager: ops inside run without recording."""

    def __enter__(self) -> "no_grad":
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()


class Tape:
    """Ordered record of executed ops with their backward closures."""

    def __init__(self, check_finite: bool = False):
        # check_finite scans every recorded op's output and every gradient
        # flowing through backward; meant for tests and debugging.
        self._nodes: list[tuple[str, Tensor, Callable[[np.ndarray], None]]] = []
        self.check_finite = check_finite

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, name: str, out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        if self.check_finite and not np.isfinite(out.data).all():
            raise NumericError(f"non-finite forward value produced by op {name!r}")
        self._nodes.append((name, out, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad for every recorded tensor reachable from loss."""
        if loss.data.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not np.isfinite(loss.data):
            raise NumericError("loss is not finite")
        loss.accumulate_grad(np.ones_like(loss.data))
        check = self.check_finite
        for name, out, backward_fn in reversed(self._nodes):
            g = out.grad
            if g is None:
                continue  # this op never fed into the loss
            # isfinite(sum) is one cheap scalar test; any NaN/Inf poisons
            # the sum.  Per-op scanning is debug-only; the optimizer still
            # rejects non-finite parameter gradients on the fast path.
            if check and not np.isfinite(np.sum(g)):
                raise NumericError(f"non-finite gradient flowing into op {name!r}")
            backward_fn(g)
