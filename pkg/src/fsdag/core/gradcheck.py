"""Finite-difference gradient checking."""

from __future__ import annotations

import logging
from collections.abc import Callable
from collections.abc import Sequence

import numpy as np

from fsdag.core.tensor import Tape
from fsdag.core.tensor import Tensor
from fsdag.core.tensor import backward

logger = logging.getLogger(__name__)


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    coords: int | None = None,
    atol: float = 0.0,
    seed: int = 0,
) -> float:
    """Compare tape gradients with central differences.

    ``fn`` must be deterministic and read the current values of ``params``.
    Each sampled coordinate contributes
    ``max(|a - n| - atol, 0) / max(|a|, |n|, 1e-8)`` where ``a`` is the
    analytic and ``n`` the numeric derivative ``(f(p+h) - f(p-h)) / 2h``.

    Args:
        fn: Zero-argument function returning a scalar Tensor
        params: Tensors to differentiate; their ``.grad`` is reset
        h: Finite-difference step
        coords: Probe at most this many coordinates per tensor (seeded sample);
            None checks every coordinate
        atol: Absolute slack subtracted from each difference
        seed: Seed for the coordinate sample

    Returns:
        Worst relative error over all checked coordinates
    """
    for p in params:
        p.zero_grad()
    tape = Tape()
    with tape:
        loss = fn()
    backward(loss, tape)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        if coords is None or coords >= flat.size:
            picked = np.arange(flat.size)
        else:
            picked = np.sort(rng.choice(flat.size, size=coords, replace=False))
        for i in picked:
            original = flat[i]
            flat[i] = original + h
            f_plus = fn().item()
            flat[i] = original - h
            f_minus = fn().item()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            exact = grad.reshape(-1)[i]
            error = max(abs(exact - numeric) - atol, 0.0) / max(abs(exact), abs(numeric), 1e-8)
            if error > worst:
                worst = error
                logger.debug(f"grad_check: {p.name or 'tensor'}[{i}] analytic={exact:.6e} numeric={numeric:.6e}")
        p.zero_grad()
    return worst
