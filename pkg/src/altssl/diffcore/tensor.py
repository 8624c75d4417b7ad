"""Reverse-mode differentiable tensors backed by float64 numpy arrays."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class Tensor:
    """A node in a computation graph.

    ``data`` is always a float64 array. Nodes produced by an operation on at
    least one ``requires_grad`` input remember their parents and a closure
    that pushes the output gradient back to them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            _not_scalar(self.shape)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if self.data.size != 1:
            _not_scalar(self.shape)
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

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            # interior nodes hand gradients to parents through the closure
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _not_scalar(shape):
    raise ShapeError(f"backward requires a scalar tensor, got shape {shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise ----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: ((a, -g),), "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
        )

    return _make(a.data * b.data, (a, b), backward, "mul")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: ((a, g * mask),), "relu")


# linear algebra -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return (
            (a, g @ b.data.T if a.requires_grad else None),
            (b, a.data.T @ g if b.requires_grad else None),
        )

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")

    def backward(g):
        return (
            (x, g @ weight.data if x.requires_grad else None),
            (weight, g.T @ x.data if weight.requires_grad else None),
            (bias, g.sum(axis=0) if bias.requires_grad else None),
        )

    return _make(x.data @ weight.data.T + bias.data, (x, weight, bias), backward, "linear")


# shape ----------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: ((a, g.reshape(a.shape)),), "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis after the first."""
    if a.data.ndim < 1:
        raise ShapeError(f"flatten: needs at least 1 axis, got shape {a.shape}")
    return reshape(a, (a.shape[0], -1))


# reductions -----------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum()), (a,), lambda g: ((a, np.full(a.shape, g)),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(
        np.asarray(a.data.mean()), (a,), lambda g: ((a, np.full(a.shape, g / n)),), "mean"
    )


# softmax family -------------------------------------------------------

def _check_2d(a: Tensor, op: str) -> None:
    if a.data.ndim != 2:
        raise ShapeError(f"{op}: expected a 2-D (batch, classes) tensor, got shape {a.shape}")


def log_softmax_array(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_array(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax_array(z))


def log_softmax(a: Tensor) -> Tensor:
    _check_2d(a, "log_softmax")
    out = log_softmax_array(a.data)
    p = np.exp(out)

    def backward(g):
        return ((a, g - p * g.sum(axis=1, keepdims=True)),)

    return _make(out, (a,), backward, "log_softmax")


def softmax(a: Tensor) -> Tensor:
    _check_2d(a, "softmax")
    p = softmax_array(a.data)

    def backward(g):
        return ((a, p * (g - (g * p).sum(axis=1, keepdims=True))),)

    return _make(p, (a,), backward, "softmax")


# convolution and pooling ----------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    b, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    return cols, oh, ow


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x`` is (B, C, H, W); ``weight`` is (O, C, kh, kw)."""
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match weight {weight.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    out_c, in_c, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(f"conv2d: kernel {weight.shape[2:]} larger than padded input {xp.shape[2:]}")
    b = x.shape[0]
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(out_c, -1)
    out = (cols @ wmat.T + bias.data).reshape(b, oh, ow, out_c).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, out_c)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(b, oh, ow, in_c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding : padding + x.shape[2], padding : padding + x.shape[3]] if padding else gxp
        return ((x, gx), (weight, gw), (bias, gb))

    return _make(out, (x, weight, bias), backward, "conv2d")


def _pool_view(x: Tensor, size: int, op: str) -> np.ndarray:
    if x.data.ndim != 4 or x.shape[2] % size or x.shape[3] % size:
        raise ShapeError(f"{op}: spatial dims of {x.shape} not divisible by {size}")
    b, c, h, w = x.shape
    return (
        x.data.reshape(b, c, h // size, size, w // size, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h // size, w // size, size * size)
    )


def _pool_unview(g: np.ndarray, shape, size: int) -> np.ndarray:
    b, c, h, w = shape
    return (
        g.reshape(b, c, h // size, w // size, size, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(shape)
    )


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; gradient goes to the first maximal entry."""
    v = _pool_view(x, size, "max_pool2d")
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gv = np.zeros(v.shape)
        np.put_along_axis(gv, idx[..., None], g[..., None], axis=-1)
        return ((x, _pool_unview(gv, x.shape, size)),)

    return _make(out, (x,), backward, "max_pool2d")


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    v = _pool_view(x, size, "avg_pool2d")
    k = size * size

    def backward(g):
        gv = np.repeat(g[..., None] / k, k, axis=-1)
        return ((x, _pool_unview(gv, x.shape, size)),)

    return _make(v.mean(axis=-1), (x,), backward, "avg_pool2d")


OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "linear": linear,
    "add": add,
    "mul": mul,
    "neg": neg,
    "relu": relu,
    "conv2d": conv2d,
    "max_pool2d": max_pool2d,
    "avg_pool2d": avg_pool2d,
    "flatten": flatten,
    "reshape": reshape,
    "log_softmax": log_softmax,
    "softmax": softmax,
    "sum": sum_all,
    "mean": mean_all,
}


def forward_op(op_name: str, inputs: Iterable[Tensor], **kwargs) -> Tensor:
    """Apply a registered operation by name."""
    try:
        fn = OPS[op_name]
    except KeyError:
        raise ValueError(f"unknown op {op_name!r}; known ops: {sorted(OPS)}") from None
    return fn(*[_as_tensor(t) for t in inputs], **kwargs)


def backward(loss: Tensor, wrt: Sequence[Tensor] | None = None) -> list[np.ndarray] | None:
    """Run backprop from ``loss``.

    With ``wrt`` given, their grads are cleared first and returned; tensors
    that do not feed ``loss`` get an all-zero gradient.
    """
    if wrt is not None:
        for t in wrt:
            t.grad = None
    loss.backward()
    if wrt is None:
        return None
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in wrt]
