"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records every operation of a forward pass in creation order, so a
node's parents always carry smaller indices than the node itself.
``backward`` walks the node list in reverse, accumulating vector-Jacobian
products into per-node gradient slots; only nodes that (transitively) depend
on a parameter leaf participate, so constants cost nothing on the way back.

All values are numpy float64. Broadcasting follows numpy rules and gradients
are summed back over the broadcast axes. Everything is deterministic: node
order, reduction order, and tie-breaking (``max`` routes to the first argmax,
``maximum`` to its first argument) are all fixed.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from ..errors import DimensionError

Array = np.ndarray


def _asarray(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class _Node:
    __slots__ = ("kind", "parents", "value", "vjp", "requires_grad")

    def __init__(self, kind: str, parents: tuple[int, ...], value: Array,
                 vjp: Callable[[Array], Sequence[Array | None]] | None,
                 requires_grad: bool):
        self.kind = kind
        self.parents = parents
        self.value = value
        self.vjp = vjp
        self.requires_grad = requires_grad


class Tape:
    """Ordered operation record plus per-node gradient slots."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.grads: list[Array | None] = []
        self.param_indices: list[int] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, kind: str, parents: tuple[int, ...], value: Array,
              vjp, requires_grad: bool) -> "Var":
        idx = len(self.nodes)
        assert all(p < idx for p in parents)
        self.nodes.append(_Node(kind, parents, value, vjp, requires_grad))
        self.grads.append(None)
        return Var(self, idx)

    def const(self, value) -> "Var":
        """A node with no gradient tracking (inputs, masks, hyperparameters)."""
        return self._push("const", (), _asarray(value), None, False)

    def leaf(self, value) -> "Var":
        """A trainable parameter leaf; registered for `backward(tape)`."""
        v = self._push("leaf", (), _asarray(value), None, True)
        self.param_indices.append(v.index)
        return v

    def backward(self, root: "Var", seed=None) -> None:
        """Populate gradients for every node `root` depends on.

        With ``seed=None`` the root must be a scalar and the seed is 1.0.
        """
        if root.tape is not self:
            raise ValueError("root belongs to a different tape")
        if seed is None:
            if root.value.size != 1:
                raise DimensionError(
                    f"backward without a seed needs a scalar root, got shape {root.value.shape}")
            seed = np.ones_like(root.value)
        else:
            seed = _asarray(seed)
            if seed.shape != root.value.shape:
                raise DimensionError(
                    f"seed shape {seed.shape} does not match root shape {root.value.shape}")
        self.grads = [None] * len(self.nodes)
        self.grads[root.index] = seed
        for i in range(root.index, -1, -1):
            g = self.grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None or not node.requires_grad:
                continue
            parent_grads = node.vjp(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not self.nodes[p].requires_grad:
                    continue
                if self.grads[p] is None:
                    self.grads[p] = pg
                else:
                    self.grads[p] = self.grads[p] + pg

    def grad(self, var: "Var") -> Array:
        g = self.grads[var.index]
        if g is None:
            g = np.zeros_like(self.nodes[var.index].value)
        return g


class Var:
    """Handle to a tape node, with numpy-style operators."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> Array:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands live on different tapes")
            return other
        return self.tape.const(other)

    def _push(self, kind, parents, value, vjp):
        rg = any(self.tape.nodes[p].requires_grad for p in parents)
        return self.tape._push(kind, parents, value, vjp, rg)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        out = a + b

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._push("add", (self.index, o.index), out, vjp)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        out = a - b

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return self._push("sub", (self.index, o.index), out, vjp)

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __mul__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        out = a * b

        def vjp(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return self._push("mul", (self.index, o.index), out, vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        out = a / b

        def vjp(g):
            return (_unbroadcast(g / b, a.shape),
                    _unbroadcast(-g * a / (b * b), b.shape))

        return self._push("div", (self.index, o.index), out, vjp)

    def __rtruediv__(self, other):
        return self._lift(other).__truediv__(self)

    def __neg__(self):
        a = self.value

        def vjp(g):
            return (-g,)

        return self._push("neg", (self.index,), -a, vjp)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only constant exponents are supported")
        a = self.value
        out = a ** p

        def vjp(g):
            return (g * p * a ** (p - 1),)

        return self._push("pow", (self.index,), out, vjp)

    def __matmul__(self, other):
        o = self._lift(other)
        a, b = self.value, o.value
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(
                f"matmul shapes {a.shape} x {b.shape} are incompatible")
        out = a @ b

        def vjp(g):
            return g @ b.T, a.T @ g

        return self._push("matmul", (self.index, o.index), out, vjp)

    # -- elementwise functions ----------------------------------------------

    def square(self):
        a = self.value

        def vjp(g):
            return (g * 2.0 * a,)

        return self._push("square", (self.index,), a * a, vjp)

    def sqrt(self):
        a = self.value
        out = np.sqrt(a)

        def vjp(g):
            return (g * 0.5 / out,)

        return self._push("sqrt", (self.index,), out, vjp)

    def exp(self):
        out = np.exp(self.value)

        def vjp(g):
            return (g * out,)

        return self._push("exp", (self.index,), out, vjp)

    def log(self):
        a = self.value

        def vjp(g):
            return (g / a,)

        return self._push("log", (self.index,), np.log(a), vjp)

    def abs(self):
        a = self.value

        def vjp(g):
            return (g * np.sign(a),)

        return self._push("abs", (self.index,), np.abs(a), vjp)

    def relu(self):
        a = self.value

        def vjp(g):
            return (g * (a > 0.0),)

        return self._push("relu", (self.index,), np.maximum(a, 0.0), vjp)

    def sigmoid(self):
        a = self.value
        out = expit(a)

        def vjp(g):
            return (g * out * (1.0 - out),)

        return self._push("sigmoid", (self.index,), out, vjp)

    # -- reductions & shaping -----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self.value
        out = a.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.shape).copy(),)

        return self._push("sum", (self.index,), out, vjp)

    def mean(self, axis=None, keepdims=False):
        a = self.value
        n = a.size if axis is None else a.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis=1):
        """Row max; gradient routes to the first argmax per row."""
        a = self.value
        idx = np.argmax(a, axis=axis)
        out = np.take_along_axis(a, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

        def vjp(g):
            z = np.zeros_like(a)
            np.put_along_axis(z, np.expand_dims(idx, axis),
                              np.expand_dims(g, axis), axis=axis)
            return (z,)

        return self._push("max", (self.index,), out, vjp)

    def logsumexp(self, axis=1, keepdims=True):
        a = self.value
        m = a.max(axis=axis, keepdims=True)
        e = np.exp(a - m)
        s = e.sum(axis=axis, keepdims=True)
        out = np.log(s) + m
        soft = e / s
        if not keepdims:
            out = out.squeeze(axis)

        def vjp(g):
            gg = g if keepdims else np.expand_dims(g, axis)
            return (gg * soft,)

        return self._push("logsumexp", (self.index,), out, vjp)

    def take_per_row(self, idx) -> "Var":
        """values[i, idx[i]] for a 2-D node; returns a 1-D node."""
        a = self.value
        idx = np.asarray(idx, dtype=np.intp)
        rows = np.arange(a.shape[0])
        out = a[rows, idx]

        def vjp(g):
            z = np.zeros_like(a)
            np.add.at(z, (rows, idx), g)
            return (z,)

        return self._push("take_per_row", (self.index,), out, vjp)

    def cols(self, sl: slice) -> "Var":
        a = self.value
        out = a[:, sl]

        def vjp(g):
            z = np.zeros_like(a)
            z[:, sl] = g
            return (z,)

        return self._push("cols", (self.index,), out, vjp)

    def reshape(self, *shape) -> "Var":
        a = self.value
        out = a.reshape(*shape)

        def vjp(g):
            return (g.reshape(a.shape),)

        return self._push("reshape", (self.index,), out, vjp)


def maximum(a: Var, b) -> Var:
    """Elementwise max; ties route the gradient to the first argument."""
    o = a._lift(b)
    x, y = a.value, o.value
    out = np.maximum(x, y)

    def vjp(g):
        take_a = x >= y
        return (_unbroadcast(g * take_a, x.shape),
                _unbroadcast(g * ~take_a, y.shape))

    return a._push("maximum", (a.index, o.index), out, vjp)


def concat(vars_: Sequence[Var], axis: int = 1) -> Var:
    tape = vars_[0].tape
    vals = [v.value for v in vars_]
    out = np.concatenate(vals, axis=axis)
    widths = [v.shape[axis] for v in vals]
    offs = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(np.take(g, np.arange(offs[i], offs[i + 1]), axis=axis)
                     for i in range(len(vals)))

    rg = any(v.tape.nodes[v.index].requires_grad for v in vars_)
    return tape._push("concat", tuple(v.index for v in vars_), out, vjp, rg)


def softmax(logits: Var) -> Var:
    """Row-wise softmax built from stable primitives."""
    return (logits - logits.logsumexp(axis=1, keepdims=True)).exp()


def backward(tape: Tape, seed=None) -> list[Array]:
    """Run backprop from the tape's final node; return per-parameter gradients.

    The final node is assumed to be the loss; without a seed it must be scalar.
    """
    if not tape.nodes:
        raise ValueError("empty tape")
    root = Var(tape, len(tape.nodes) - 1)
    tape.backward(root, seed)
    return [tape.grad(Var(tape, i)) for i in tape.param_indices]
