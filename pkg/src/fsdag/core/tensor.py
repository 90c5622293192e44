"""Dense tensors and the computation tape used for reverse-mode differentiation.

A Tensor wraps a float64 numpy array. Operations in ``fsdag.core.ops`` record
themselves on the active Tape (entered with ``with tape:``) whenever one of
their inputs requires a gradient. Outside a tape nothing is recorded, which is
how evaluation and finite-difference checks run.
"""

from __future__ import annotations

import contextvars
from collections.abc import Callable
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class RankError(ValueError):
    """Raised when an operand has the wrong number of axes."""


class ContractViolation(RuntimeError):
    """Raised when a caller breaks an operation's precondition."""


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("fsdag_active_tape", default=None)


class Tensor:
    """Dense n-dimensional float64 array with optional gradient tracking.

    Attributes:
        data: The values, always a C-contiguous float64 array
        requires_grad: Whether backward should deliver a gradient here
        grad: Accumulated gradient, same shape as data, or None
        name: Optional label used by checkpoints and diagnostics
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None) -> None:
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Wrap an operation result without copying it."""
        tensor = cls.__new__(cls)
        tensor.data = np.ascontiguousarray(array, dtype=np.float64)
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.name = None
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat view of the values."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: Any) -> "Tensor":
        from fsdag.core import ops

        return ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from fsdag.core import ops

        return ops.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        from fsdag.core import ops

        return ops.sub(self, other)

    def __mul__(self, other: Any) -> "Tensor":
        from fsdag.core import ops

        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from fsdag.core import ops

        return ops.mul(other, self)

    def __neg__(self) -> "Tensor":
        from fsdag.core import ops

        return ops.neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from fsdag.core import ops

        return ops.matmul(self, other)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class TapeEntry:
    """One executed operation: its inputs, output and local backward rule."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; every differentiable op run inside the block
    appends a TapeEntry. Tapes are single-writer but independent tapes may be
    active in different threads at once.

    Example:
        >>> w = Tensor([1.0, 2.0], requires_grad=True)
        >>> tape = Tape()
        >>> with tape:
        ...     loss = ops.sum(ops.mul(w, w))
        >>> backward(loss, tape)
    """

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []
        self._tokens: list[contextvars.Token] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc_info: object) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn) -> None:
        self.entries.append(TapeEntry(op=op, inputs=inputs, output=output, backward=backward))


def active_tape() -> Tape | None:
    """Return the tape currently recording in this context, if any."""
    return _ACTIVE_TAPE.get()


def backward(loss: Tensor, tape: Tape) -> None:
    """Propagate d(loss)/d(x) to every leaf tensor with requires_grad.

    Entries are replayed in exact reverse execution order. Gradients meeting
    at fan-out points are summed; leaf gradients accumulate into ``.grad``
    across calls until ``zero_grad``.

    Raises:
        ContractViolation: loss is not a scalar or was not produced by the tape
    """
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")

    produced = {id(entry.output) for entry in tape.entries}
    if id(loss) not in produced:
        raise ContractViolation("loss was not produced by this tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        upstream = pending.pop(id(entry.output), None)
        if upstream is None:
            continue
        for tensor, grad in zip(entry.inputs, entry.backward(upstream)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in produced:
                pending[key] = pending[key] + grad if key in pending else grad
            elif tensor.grad is None:
                tensor.grad = np.array(grad, dtype=np.float64)
            else:
                tensor.grad = tensor.grad + grad
