"""Rank-4 tensors and a tape-based reverse-mode autodiff engine.

Everything that flows through a network is a :class:`Tensor4` with shape
(batch, channels, height, width).  Primitive operations (see ``ops.py``)
append a record to a global tape whenever their output requires gradients;
``backward`` replays the tape in reverse and accumulates gradients
additively, so a tensor used at several sites ends up with the sum of the
per-site gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional

import numpy as np

from .errors import ShapeError

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor4:
    """Dense (n, c, h, w) array, optionally tracked by the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ShapeError(f"Tensor4 expects a rank-4 array, got shape {arr.shape}")
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor4":
        return Tensor4(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor4(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter:
    """Named trainable tensor.

    Parameters in the same ``sharing_group`` must alias one single object;
    builders enforce this by construction, so using a shared parameter at
    two sites is literally using the same tensor twice and the tape's
    additive accumulation produces the summed gradient.
    """

    __slots__ = ("name", "tensor", "sharing_group")

    def __init__(self, name: str, tensor: Tensor4, sharing_group: Optional[str] = None):
        tensor.requires_grad = True
        self.name = name
        self.tensor = tensor
        self.sharing_group = sharing_group

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.ascontiguousarray(value, dtype=self.tensor.data.dtype)

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape

    def zero_grad(self):
        self.tensor.grad = None

    def __repr__(self):
        share = f", sharing_group={self.sharing_group!r}" if self.sharing_group else ""
        return f"Parameter({self.name!r}, shape={self.shape}{share})"


# --- the tape -------------------------------------------------------------

# One record per executed primitive: (output tensor, backward closure).
# The closure takes the gradient w.r.t. the output and accumulates into the
# inputs' .grad buffers.
_TAPE: list[tuple[Tensor4, Callable[[np.ndarray], None]]] = []
_RECORDING = True


def is_recording() -> bool:
    return _RECORDING


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (eval / inference passes)."""
    global _RECORDING
    prev = _RECORDING
    _RECORDING = False
    try:
        yield
    finally:
        _RECORDING = prev


def record(out: Tensor4, backward_fn: Callable[[np.ndarray], None]):
    """Append a backward closure for ``out`` if recording is active."""
    if _RECORDING and out.requires_grad:
        _TAPE.append((out, backward_fn))


def tape_length() -> int:
    return len(_TAPE)


def clear_tape():
    _TAPE.clear()


def accumulate(t: Tensor4, g: np.ndarray):
    """Add ``g`` into ``t.grad``, allocating the buffer on first touch."""
    if g.shape != t.data.shape:
        raise ShapeError(f"gradient shape {g.shape} != tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.ascontiguousarray(g, dtype=t.data.dtype)
    else:
        t.grad += g


def backward(loss: Tensor4):
    """Run reverse-mode accumulation from a scalar loss.

    Walks the tape from the newest record to the oldest; records whose
    output never received a gradient are not ancestors of the loss and are
    skipped.  The tape is consumed.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    try:
        for out, fn in reversed(_TAPE):
            if out.grad is not None:
                fn(out.grad)
    finally:
        _TAPE.clear()
