"""Reverse-mode automatic differentiation over float64 numpy arrays.

A small tensor engine for the model stacks: every op records its parent
tensors and a backward closure, and Tensor.backward() applies the chain
rule over the recorded graph in reverse topological order. Shapes follow
numpy broadcasting; the gradient of a broadcast operand is summed back
down to the operand's shape. All data is kept in 64-bit reals so finite
difference checks are meaningful.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

Array = np.ndarray


def _as_array(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A float64 array with an optional gradient and graph history."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    # -- construction -------------------------------------------------

    @staticmethod
    def _from_op(data: Array, parents: Sequence["Tensor"],
                 backward: Callable[[Array], None]) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, grad: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self, grad: Array | None = None) -> None:
        """Backpropagate from this tensor (scalar unless grad is given)."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed requires a scalar tensor")
            grad = np.ones_like(self.data)
        # Reverse topological order via iterative post-order DFS.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(_as_array(grad))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other) -> "Tensor":
        a, b = self, Tensor._coerce(other)
        data = a.data + b.data

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._from_op(data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._from_op(-a.data, (a,), backward)

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        a, b = self, Tensor._coerce(other)
        data = a.data * b.data

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._from_op(data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        a, b = self, Tensor._coerce(other)
        data = a.data / b.data

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._from_op(data, (a, b), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor._coerce(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self
        p = float(exponent)
        data = a.data**p

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(g * p * a.data ** (p - 1.0))

        return Tensor._from_op(data, (a,), backward)

    def __matmul__(self, other) -> "Tensor":
        a, b = self, Tensor._coerce(other)
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul requires tensors with ndim >= 2")
        data = a.data @ b.data

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

        return Tensor._from_op(data, (a, b), backward)

    # -- elementwise transcendentals ------------------------------------

    def exp(self) -> "Tensor":
        a = self
        data = np.exp(a.data)

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(g * data)

        return Tensor._from_op(data, (a,), backward)

    def log(self) -> "Tensor":
        a = self

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(g / a.data)

        return Tensor._from_op(np.log(a.data), (a,), backward)

    def tanh(self) -> "Tensor":
        a = self
        data = np.tanh(a.data)

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(g * (1.0 - data * data))

        return Tensor._from_op(data, (a,), backward)

    def sqrt(self) -> "Tensor":
        return self**0.5

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g: Array) -> None:
            if not a.requires_grad:
                return
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy())

        return Tensor._from_op(data, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else (
            np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- shape manipulation ----------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old_shape = a.shape

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(g.reshape(old_shape))

        return Tensor._from_op(a.data.reshape(shape), (a,), backward)

    def transpose(self, axes: tuple[int, ...]) -> "Tensor":
        a = self
        inv = np.argsort(axes)

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(g.transpose(inv))

        return Tensor._from_op(a.data.transpose(axes), (a,), backward)

    def broadcast_to(self, shape: tuple[int, ...]) -> "Tensor":
        a = self
        old_shape = a.shape

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, old_shape))

        return Tensor._from_op(np.broadcast_to(a.data, shape).copy(), (a,), backward)

    def __getitem__(self, key) -> "Tensor":
        a = self
        data = a.data[key]
        if not isinstance(data, np.ndarray):
            data = np.asarray(data)

        def backward(g: Array) -> None:
            if a.requires_grad:
                # add.at is unbuffered, so repeated fancy indices (e.g.
                # duplicate token ids in an embedding lookup) accumulate.
                full = np.zeros_like(a.data)
                np.add.at(full, key, g)
                a._accumulate(full)

        return Tensor._from_op(data, (a,), backward)

    def masked_fill(self, mask: Array, value: float) -> "Tensor":
        """Replace entries where mask is True with a constant."""
        a = self
        mask_b = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        data = np.where(mask_b, value, a.data)

        def backward(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(np.where(mask_b, 0.0, g))

        return Tensor._from_op(data, (a,), backward)


def concatenate(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [Tensor._coerce(t) for t in tensors]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: Array) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return Tensor._from_op(data, parts, backward)


# -- composed functions ------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    # The subtracted max is a constant: shifting logits does not change
    # the softmax, so no gradient needs to flow through it.
    shifted = x - np.max(x.data, axis=axis, keepdims=True)
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - np.max(x.data, axis=axis, keepdims=True)
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated gaussian error linear unit."""
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gain + bias


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out
