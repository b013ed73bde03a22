"""Adam optimizer with bias correction."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import NumericError, Tensor


class Adam:
    """Holds per-parameter moment state; step() updates and zeroes grads.

    A parameter whose grad is None is treated as having a zero gradient:
    its moments still decay and its value moves by exactly zero.
    """

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        bias1 = 1.0 - self.beta1**self.step_count
        bias2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            # isfinite(sum) is one scalar test; any NaN/Inf poisons the sum
            if p.grad is not None and not np.isfinite(np.sum(p.grad)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.grad = None
