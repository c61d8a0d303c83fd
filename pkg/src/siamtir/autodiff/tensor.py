"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and remembers the operation that
produced it.  Calling :meth:`Tensor.backward` on a scalar walks the recorded
graph in reverse topological order and accumulates gradients.

Complex tensors carry gradients in the conjugate convention used by most
frameworks: for a real loss ``L`` and complex value ``z`` the stored gradient
is ``dL/dRe(z) + 1j * dL/dIm(z)``.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..exceptions import NonScalarLossError

_state = {"dtype": np.dtype(np.float32), "grad": True}


def get_default_dtype() -> np.dtype:
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _state["dtype"] = dtype


def complex_dtype() -> np.dtype:
    return np.dtype(np.complex64 if _state["dtype"] == np.float32 else np.complex128)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype new tensors are created with."""
    previous = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = previous


def verification_mode():
    """64-bit arithmetic, used by gradient checks and determinism runs."""
    return precision(np.float64)


@contextlib.contextmanager
def no_grad():
    previous = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = previous


def is_grad_enabled() -> bool:
    return _state["grad"]


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if np.iscomplexobj(arr):
        return arr.astype(complex_dtype(), copy=False)
    return arr.astype(_state["dtype"], copy=False)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _match(grad: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # real leaves reached through complex ops keep only the real part
    if np.iscomplexobj(grad) and not np.iscomplexobj(ref):
        grad = grad.real
    return unbroadcast(grad, ref.shape).astype(ref.dtype, copy=False)


class Tensor:
    """Dense array plus the bookkeeping needed for reverse-mode AD."""

    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data.data if isinstance(data, Tensor) else data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @classmethod
    def from_op(cls, data, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        """Build the output node of an operation.

        ``backward`` maps the output gradient to a tuple with one entry per
        parent (``None`` where no gradient flows).
        """
        out = cls.__new__(cls)
        out.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        out.grad = None
        out.name = ""
        out.op = op
        track = _state["grad"] and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{label})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = ensure_tensor(other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a + b, (self, other), lambda g: (_match(g, a), _match(g, b)), "add"
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-ensure_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return ensure_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = ensure_tensor(other)
        a, b = self.data, other.data

        def backward(g):
            return _match(g * np.conj(b), a), _match(g * np.conj(a), b)

        return Tensor.from_op(a * b, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = ensure_tensor(other)
        a, b = self.data, other.data
        out = a / b

        def backward(g):
            ga = g / np.conj(b)
            gb = -g * np.conj(out / b)
            return _match(ga, a), _match(gb, b)

        return Tensor.from_op(out, (self, other), backward, "div")

    def __rtruediv__(self, other) -> "Tensor":
        return ensure_tensor(other) / self

    def __getitem__(self, index) -> "Tensor":
        shape, dtype = self.data.shape, self.data.dtype

        def backward(g):
            full = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
            np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(self.data[index], (self,), backward, "index")

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.data.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(
            np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward, "sum"
        )

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.data.shape
        return Tensor.from_op(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),), "reshape"
        )

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(range(self.ndim))[::-1]
        inverse = tuple(np.argsort(axes))
        return Tensor.from_op(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose"
        )

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * np.conj(out),), "exp")

    def log(self) -> "Tensor":
        a = self.data
        return Tensor.from_op(np.log(a), (self,), lambda g: (g / np.conj(a),), "log")

    # -- differentiation -----------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate ``d self / d leaf`` into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise NonScalarLossError(
                    f"backward() needs a scalar loss, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def ensure_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def gradients(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to each of ``params``.

    Parameters the loss does not depend on get an all-zero gradient.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss.backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
