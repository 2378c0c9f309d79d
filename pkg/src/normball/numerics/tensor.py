"""Define-by-run reverse-mode autodiff over dense float64 numpy arrays.

A :class:`Tape` records every primitive applied to tensors that live on it.
Tensors created without a tape are plain constants, so the same forward code
serves both training (tape attached) and inference (no tape).

Example
-------
>>> tape = Tape()
>>> x = tape.variable([3.0], name="x")
>>> loss = ops.sum(ops.square(x))
>>> grads = backward(tape, loss)
>>> float(grads["x"][0])
6.0
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when an input does not have the shape an operation requires."""


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    output: int
    forward: Callable | None = None
    vjp: Callable | None = None


class Tensor:
    """A float64 array, optionally attached to a tape."""

    __slots__ = ("data", "tape", "node_id", "name")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int | None = None, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar; every method dispatches to a recorded primitive
    def __add__(self, other):
        return ops.add(self, other)

    def __radd__(self, other):
        return ops.add(other, self)

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    def __rmul__(self, other):
        return ops.mul(other, self)

    def __truediv__(self, other):
        return ops.div(self, other)

    def __rtruediv__(self, other):
        return ops.div(other, self)

    def __neg__(self):
        return ops.neg(self)

    def __matmul__(self, other):
        return ops.matmul(self, other)


@dataclass
class Tape:
    """Ordered record of primitives. Node ids index ``values``."""

    nodes: list[Node] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    leaves: dict[str, int] = field(default_factory=dict)

    def _push(self, value: np.ndarray) -> int:
        self.values.append(value)
        return len(self.values) - 1

    def variable(self, data, name: str | None = None) -> Tensor:
        """Register a differentiable leaf. Named leaves appear in backward's result."""
        arr = np.array(data, dtype=np.float64)
        nid = self._push(arr)
        self.nodes.append(Node("leaf", (), nid))
        if name is not None:
            if name in self.leaves:
                raise ValueError(f"duplicate leaf name {name!r}")
            self.leaves[name] = nid
        return Tensor(arr, self, nid, name)

    def constant(self, data) -> Tensor:
        arr = np.asarray(data, dtype=np.float64)
        nid = self._push(arr)
        self.nodes.append(Node("const", (), nid))
        return Tensor(arr, self, nid)

    def watch(self, params: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.variable(v, name=k) for k, v in params.items()}

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from the leaves in tape order."""
        out: list[np.ndarray | None] = [None] * len(self.values)
        for node in self.nodes:
            if node.forward is None:
                out[node.output] = self.values[node.output]
            else:
                out[node.output] = node.forward(*[out[i] for i in node.inputs])
        return out  # type: ignore[return-value]

    def __len__(self) -> int:
        return len(self.nodes)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _wrap(result) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = result if type(result) is np.ndarray and result.dtype == np.float64 else np.asarray(result, np.float64)
    out.tape = out.node_id = out.name = None
    return out


def _apply(op: str, inputs: Sequence, forward: Callable, vjp: Callable) -> Tensor:
    """Run ``forward`` on input arrays and record it when any input is taped.

    ``vjp(g, out, *xs)`` returns one gradient (or None) per input.
    """
    tape = None
    arrays = []
    for x in inputs:
        if isinstance(x, Tensor):
            arrays.append(x.data)
            if x.tape is not None:
                if tape is not None and x.tape is not tape:
                    raise ValueError("inputs live on different tapes")
                tape = x.tape
        else:
            arrays.append(np.asarray(x, dtype=np.float64))
    result = forward(*arrays)
    if tape is None:
        return _wrap(result)
    result = np.asarray(result, dtype=np.float64)
    ids = []
    for x, arr in zip(inputs, arrays):
        if isinstance(x, Tensor) and x.tape is tape:
            ids.append(x.node_id)
        else:
            ids.append(tape.constant(arr).node_id)
    nid = tape._push(result)
    tape.nodes.append(Node(op, tuple(ids), nid, forward, vjp))
    return Tensor(result, tape, nid)


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Gradients are returned keyed by leaf name; leaves unreachable from the
    loss get zeros.
    """
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    needs = [False] * len(tape.values)
    for node in tape.nodes:
        needs[node.output] = node.op == "leaf" or any(needs[i] for i in node.inputs)
    grads: list[np.ndarray | None] = [None] * len(tape.values)
    grads[loss.node_id] = np.ones_like(tape.values[loss.node_id])
    for node in reversed(tape.nodes):
        g = grads[node.output]
        if g is None or node.vjp is None or not needs[node.output]:
            continue
        xs = [tape.values[i] for i in node.inputs]
        in_grads = node.vjp(g, tape.values[node.output], *xs)
        for i, gi in zip(node.inputs, in_grads):
            if gi is None or not needs[i]:
                continue
            if grads[i] is None:
                grads[i] = np.array(gi, dtype=np.float64)
            else:
                grads[i] = grads[i] + gi
    result = {}
    for name, nid in tape.leaves.items():
        g = grads[nid]
        result[name] = np.zeros_like(tape.values[nid]) if g is None else g
    return result


class ops:
    """Primitive operations. Each accepts Tensors or array-likes."""

    @staticmethod
    def add(a, b) -> Tensor:
        return _apply(
            "add", (a, b), np.add,
            lambda g, out, x, y: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
        )

    @staticmethod
    def sub(a, b) -> Tensor:
        return _apply(
            "sub", (a, b), np.subtract,
            lambda g, out, x, y: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)),
        )

    @staticmethod
    def mul(a, b) -> Tensor:
        return _apply(
            "mul", (a, b), np.multiply,
            lambda g, out, x, y: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        )

    @staticmethod
    def div(a, b) -> Tensor:
        return _apply(
            "div", (a, b), np.divide,
            lambda g, out, x, y: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)),
        )

    @staticmethod
    def neg(a) -> Tensor:
        return _apply("neg", (a,), np.negative, lambda g, out, x: (-g,))

    @staticmethod
    def matmul(a, b) -> Tensor:
        def fwd(x, y):
            if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
                raise ShapeError(f"matmul shapes {x.shape} and {y.shape} do not align")
            return x @ y

        return _apply("matmul", (a, b), fwd, lambda g, out, x, y: (g @ y.T, x.T @ g))

    @staticmethod
    def elu(a, alpha: float = 1.0) -> Tensor:
        def fwd(x):
            return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))

        return _apply("elu", (a,), fwd, lambda g, out, x: (g * np.where(x > 0, 1.0, out + alpha),))

    @staticmethod
    def tanh(a) -> Tensor:
        return _apply("tanh", (a,), np.tanh, lambda g, out, x: (g * (1.0 - out * out),))

    @staticmethod
    def sigmoid(a) -> Tensor:
        def fwd(x):
            # split by sign so exp never overflows
            e = np.exp(-np.abs(x))
            return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

        return _apply("sigmoid", (a,), fwd, lambda g, out, x: (g * out * (1.0 - out),))

    @staticmethod
    def exp(a) -> Tensor:
        return _apply("exp", (a,), np.exp, lambda g, out, x: (g * out,))

    @staticmethod
    def square(a) -> Tensor:
        return _apply("square", (a,), np.square, lambda g, out, x: (2.0 * g * x,))

    @staticmethod
    def sum(a, axis=None, keepdims: bool = False) -> Tensor:
        def vjp(g, out, x):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

        return _apply("sum", (a,), lambda x: np.sum(x, axis=axis, keepdims=keepdims), vjp)

    @staticmethod
    def mean(a, axis=None, keepdims: bool = False) -> Tensor:
        def vjp(g, out, x):
            n = x.size if axis is None else x.shape[axis]
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, x.shape).copy(),)

        return _apply("mean", (a,), lambda x: np.mean(x, axis=axis, keepdims=keepdims), vjp)

    @staticmethod
    def maximum(a, c: float) -> Tensor:
        """Elementwise max(a, c) with a constant; the gradient at a tie goes to the constant."""
        c = float(c)
        return _apply("maximum", (a,), lambda x: np.maximum(x, c), lambda g, out, x: (g * (x > c),))

    @staticmethod
    def norm_sq(a) -> Tensor:
        return _apply(
            "norm_sq", (a,), lambda x: np.sum(x * x, axis=-1),
            lambda g, out, x: (2.0 * g[..., None] * x,),
        )

    @staticmethod
    def norm(a) -> Tensor:
        """Euclidean norm over the last axis; subgradient 0 at the origin."""
        def vjp(g, out, x):
            safe = np.where(out > 0, out, 1.0)
            return (np.where(out[..., None] > 0, g[..., None] * x / safe[..., None], 0.0),)

        return _apply("norm", (a,), lambda x: np.sqrt(np.sum(x * x, axis=-1)), vjp)

    @staticmethod
    def dot(a, b) -> Tensor:
        """Row-wise inner product over the last axis."""
        return _apply(
            "dot", (a, b), lambda x, y: np.sum(x * y, axis=-1),
            lambda g, out, x, y: (g[..., None] * y, g[..., None] * x),
        )

    @staticmethod
    def cosine(a, b) -> Tensor:
        """Row-wise cosine similarity. Zero rows have no defined cosine."""
        def fwd(x, y):
            nx = np.sqrt(np.sum(x * x, axis=-1))
            ny = np.sqrt(np.sum(y * y, axis=-1))
            if np.any(nx == 0) or np.any(ny == 0):
                raise ZeroDivisionError("cosine undefined for a zero embedding")
            return np.sum(x * y, axis=-1) / (nx * ny)

        def vjp(g, out, x, y):
            nx = np.sqrt(np.sum(x * x, axis=-1))[..., None]
            ny = np.sqrt(np.sum(y * y, axis=-1))[..., None]
            c = out[..., None]
            gx = y / (nx * ny) - c * x / (nx * nx)
            gy = x / (nx * ny) - c * y / (ny * ny)
            return (g[..., None] * gx, g[..., None] * gy)

        return _apply("cosine", (a, b), fwd, vjp)

    @staticmethod
    def concat(tensors: Sequence, axis: int = -1) -> Tensor:
        def fwd(*xs):
            return np.concatenate(xs, axis=axis)

        def vjp(g, out, *xs):
            cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
            return tuple(np.split(g, cuts, axis=axis))

        return _apply("concat", tuple(tensors), fwd, vjp)

    @staticmethod
    def take(a, index) -> Tensor:
        """Gather rows along axis 0."""
        index = np.asarray(index, dtype=np.intp)

        def vjp(g, out, x):
            gx = np.zeros_like(x)
            np.add.at(gx, index, g)
            return (gx,)

        return _apply("take", (a,), lambda x: x[index], vjp)

    @staticmethod
    def reshape(a, shape: tuple[int, ...]) -> Tensor:
        return _apply("reshape", (a,), lambda x: x.reshape(shape), lambda g, out, x: (g.reshape(x.shape),))

    @staticmethod
    def log_softmax(a, axis: int = -1) -> Tensor:
        def fwd(x):
            shifted = x - x.max(axis=axis, keepdims=True)
            return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

        def vjp(g, out, x):
            return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

        return _apply("log_softmax", (a,), fwd, vjp)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)
