"""Dense tensors and the reverse-mode computation tape.

Operations in :mod:`unetr.ops` record themselves on the tape that is active in
the current context. A tape is confined to the thread (or task) that opened it;
independent tapes may run concurrently.
"""
from __future__ import annotations

from contextvars import ContextVar
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import NumericalError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_active_tape: ContextVar[Optional['Tape']] = ContextVar('unetr_active_tape', default=None)


class Tensor:
    """A dense n-dimensional array with an optional gradient."""

    __slots__ = ('data', 'requires_grad', 'grad', 'name')

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None) -> None:
        array = np.asarray(data, dtype=dtype)
        if array.dtype not in (np.float32, np.float64):
            array = array.astype(np.float32)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    def __repr__(self) -> str:
        label = f' {self.name!r}' if self.name else ''
        return f'<Tensor{label} shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}>'

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        return Tensor(self.data, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.shape:
            raise ShapeError(f'gradient shape {grad.shape} does not match tensor shape {self.shape}')
        grad = grad.astype(self.dtype, copy=False)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    # arithmetic sugar, implemented in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


class TapeEntry:
    __slots__ = ('op', 'inputs', 'output', 'backward')

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn) -> None:
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward

    def __repr__(self) -> str:
        return f'<TapeEntry {self.op}: {[i.shape for i in self.inputs]} -> {self.output.shape}>'


class Tape:
    """Ordered record of executed operations.

    Entries are appended in execution order, so every entry's inputs were produced
    before it (topological order by construction).

    >>> with Tape() as tape:
    ...     loss = ops.sum(ops.mul(x, y))
    >>> tape.backward(loss)
    """

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []
        self._token = None

    def __enter__(self) -> 'Tape':
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: Iterable[Tensor], output: Tensor, backward: BackwardFn) -> None:
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward))

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
        return backward(self, loss, params)


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


class no_grad:
    """Suspend recording on the active tape."""

    def __enter__(self) -> None:
        self._token = _active_tape.set(None)

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Replay ``tape`` in reverse from the scalar ``loss``.

    Gradients are summed across fan-out and accumulated into ``.grad`` of every
    leaf tensor that requires a gradient. Tensors passed in ``params`` that did
    not take part in the computation receive a zero gradient. Returns the
    gradients keyed by ``id(tensor)``.
    """
    if loss.size != 1:
        raise ShapeError(f'backward needs a scalar loss, got shape {loss.shape}')
    if not np.all(np.isfinite(loss.data)):
        raise NumericalError(f'backward seed is not finite: {loss.data.reshape(-1)[0]}')

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced: set[int] = set()
    leaves: dict[int, Tensor] = {}
    for entry in tape.entries:
        produced.add(id(entry.output))
        for tensor in entry.inputs:
            if tensor.requires_grad and id(tensor) not in produced:
                leaves[id(tensor)] = tensor

    for entry in reversed(tape.entries):
        grad = grads.pop(id(entry.output), None)
        if grad is None:
            continue
        for tensor, g in zip(entry.inputs, entry.backward(grad)):
            if g is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g

    result: dict[int, np.ndarray] = {}
    for key, tensor in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(tensor.data)
        tensor.accumulate_grad(g)
        result[key] = g
    for tensor in params or ():
        if id(tensor) not in result:
            g = np.zeros_like(tensor.data)
            tensor.accumulate_grad(g)
            result[id(tensor)] = g
    return result
