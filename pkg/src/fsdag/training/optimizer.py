"""Adam optimizer over Tensor parameters."""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from fsdag.core.tensor import Tensor


class Adam:
    """Adam with bias correction; tensors without a gradient are skipped."""

    def __init__(
        self,
        parameters: Iterable[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.parameters = list(parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.parameters]
        self.v = [np.zeros_like(p.data) for p in self.parameters]

    def step(self) -> None:
        """Apply one update from the accumulated ``.grad`` of each parameter."""
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for param, m, v in zip(self.parameters, self.m, self.v):
            if param.grad is None:
                continue
            g = param.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            param.data -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def zero_grad(self) -> None:
        for param in self.parameters:
            param.zero_grad()
