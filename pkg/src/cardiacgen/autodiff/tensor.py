"""Reverse-mode automatic differentiation over numpy arrays.

Every primitive records a vector-Jacobian product (VJP) closure.  VJPs are
written in terms of other primitives, so running ``grad(..., create_graph=True)``
yields gradients that are themselves graph nodes and can be differentiated
again (needed for the gradient penalty).  A few fused primitives (the GRU
scan) carry hand-written numpy VJPs and are first-order only.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NonDifferentiablePrimitive, NonScalarOutput, ShapeMismatch

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.float64


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def default_dtype(dtype):
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


@contextlib.contextmanager
def enable_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = True
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """N-dimensional array that optionally records how it was computed."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op", "first_order_only")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype.kind == "f" else _DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self.op = "leaf"
        self.first_order_only = False

    # -- introspection ------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- convenience wrappers -----------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def sqrt(self):
        return power(self, 0.5)

    def backward(self, grad_output=None) -> None:
        backward(self, grad_output)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or _DEFAULT_DTYPE))


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype if data.dtype.kind == "f" else None)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out.op = op
    return out


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype if isinstance(b, Tensor) else _DEFAULT_DTYPE))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


# ---------------------------------------------------------------------------
# broadcasting helpers (linear, mutually adjoint)
# ---------------------------------------------------------------------------
def _reduce_to_shape(x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    if lead:
        x = x.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x


def sum_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    return _make(_reduce_to_shape(x.data, shape), (x,), lambda g: (broadcast_to(g, src),), "sum_to")


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    data = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    return _make(data, (x,), lambda g: (sum_to(g, src),), "broadcast_to")


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return _make(a.data + b.data, (a, b), lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return _make(a.data - b.data, (a, b), lambda g: (sum_to(g, a.shape), sum_to(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (sum_to(g * b, a.shape), sum_to(g * a, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _coerce(a, b)
    return _make(a.data / b.data, (a, b),
                 lambda g: (sum_to(g / b, a.shape), sum_to(-g * a / (b * b), b.shape)), "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    if p == 1.0:
        return a
    return _make(a.data ** p, (a,), lambda g: (g * p * power(a, p - 1.0),), "power")


def exp(a: Tensor) -> Tensor:
    out = None

    def vjp(g):
        return (g * out,)

    out = _make(np.exp(a.data), (a,), vjp, "exp")
    return out


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a,), "log")


def tanh(a: Tensor) -> Tensor:
    out = None

    def vjp(g):
        return (g * (1.0 - out * out),)

    out = _make(np.tanh(a.data), (a,), vjp, "tanh")
    return out


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a: Tensor) -> Tensor:
    out = None

    def vjp(g):
        return (g * out * (1.0 - out),)

    out = _make(_sigmoid_np(a.data), (a,), vjp, "sigmoid")
    return out


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.dtype)
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def softplus(a: Tensor) -> Tensor:
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: (g * sigmoid(a),), "softplus")


def heaviside(a: Tensor) -> Tensor:
    """Hard step; has no usable derivative and refuses to be differentiated."""

    def vjp(g):
        raise NonDifferentiablePrimitive("heaviside step has no derivative")

    return _make((a.data > 0).astype(a.dtype), (a,), vjp, "heaviside")


# ---------------------------------------------------------------------------
# linear algebra / shape primitives
# ---------------------------------------------------------------------------
def _swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def matmul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return _make(data, (a, b),
                 lambda g: (sum_to(g @ _swap_last(b), a.shape), sum_to(_swap_last(a) @ g, b.shape)),
                 "matmul")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
    src = a.shape

    def vjp(g):
        if not keepdims:
            g = reshape(g, kept)
        return (broadcast_to(g, src),)

    return _make(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), vjp, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return _make(data, (a,), lambda g: (reshape(g, src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (transpose(g, inv),), "transpose")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    src = a.shape
    return _make(np.array(a.data[idx]), (a,), lambda g: (scatter(g, src, idx),), "getitem")


def scatter(g: Tensor, shape, idx) -> Tensor:
    """Adjoint of ``getitem``: place ``g`` at ``idx`` inside zeros of ``shape``."""
    out = np.zeros(shape, dtype=g.dtype)
    if _is_basic_index(idx):
        out[idx] = g.data
    else:
        np.add.at(out, idx, g.data)
    return _make(out, (g,), lambda h: (getitem(h, idx),), "scatter")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeMismatch(f"concat shapes disagree off axis {axis}: {[x.shape for x in tensors]}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * ndim
            idx[axis] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim + 1
    axis = axis % ndim
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def pad_last(a: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    if left == 0 and right == 0:
        return a
    parts = []
    if left:
        parts.append(Tensor(np.zeros(a.shape[:-1] + (left,), dtype=a.dtype)))
    parts.append(a)
    if right:
        parts.append(Tensor(np.zeros(a.shape[:-1] + (right,), dtype=a.dtype)))
    return concat(parts, axis=-1)


def repeat_last(a: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling along the last axis."""
    if factor == 1:
        return a
    expanded = broadcast_to(reshape(a, a.shape + (1,)), a.shape + (factor,))
    return reshape(expanded, a.shape[:-1] + (a.shape[-1] * factor,))


# ---------------------------------------------------------------------------
# 1-d convolution via unfold (im2col) + matmul
# ---------------------------------------------------------------------------
def unfold1d(x: Tensor, kernel: int, stride: int = 1) -> Tensor:
    """(B, C, L) -> (B, L_out, C*K) sliding windows."""
    if x.ndim != 3:
        raise ShapeMismatch(f"unfold1d expects (B, C, L), got {x.shape}")
    b, c, length = x.shape
    if length < kernel:
        raise ShapeMismatch(f"signal length {length} shorter than kernel {kernel}")
    win = sliding_window_view(x.data, kernel, axis=2)[:, :, ::stride, :]
    l_out = win.shape[2]
    data = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b, l_out, c * kernel)
    return _make(data, (x,), lambda g: (fold1d(g, c, length, kernel, stride),), "unfold1d")


def fold1d(g: Tensor, channels: int, length: int, kernel: int, stride: int) -> Tensor:
    """Adjoint of ``unfold1d``: overlap-add windows back onto the signal."""
    b, l_out, _ = g.shape
    cols = g.data.reshape(b, l_out, channels, kernel)
    out = np.zeros((b, channels, length), dtype=g.dtype)
    stop = stride * (l_out - 1) + 1
    for k in range(kernel):
        out[:, :, k:k + stop:stride] += cols[:, :, :, k].transpose(0, 2, 1)
    return _make(out, (g,), lambda h: (unfold1d(h, kernel, stride),), "fold1d")


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int | tuple[int, int] | str = 0) -> Tensor:
    """Cross-correlation of ``x`` (B, C_in, L) with ``weight`` (C_out, C_in, K).

    ``padding="same"`` zero-pads K//2 on the left and (K-1)//2 on the right.
    """
    x = as_tensor(x)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"conv1d input {x.shape} incompatible with weight {weight.shape}")
    c_out, c_in, k = weight.shape
    if padding == "same":
        padding = (k // 2, (k - 1) // 2)
    elif isinstance(padding, int):
        padding = (padding, padding)
    xp = pad_last(x, *padding)
    cols = unfold1d(xp, k, stride)                                  # (B, L_out, C_in*K)
    out = cols @ transpose(reshape(weight, (c_out, c_in * k)), (1, 0))  # (B, L_out, C_out)
    out = transpose(out, (0, 2, 1))
    if bias is not None:
        out = out + reshape(bias, (1, c_out, 1))
    return out


# ---------------------------------------------------------------------------
# composite helpers
# ---------------------------------------------------------------------------
def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = Tensor(np.max(a.data, axis=axis, keepdims=True))
    return log(tsum(exp(a - m), axis=axis, keepdims=True)) + m


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    return a - logsumexp(a, axis)


def l2_norm(a: Tensor, axis, eps: float = 1e-12) -> Tensor:
    """Euclidean norm over ``axis``; ``eps`` keeps the derivative finite at 0."""
    return power(tsum(a * a, axis=axis) + eps, 0.5)


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------
def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(grads: dict, key: int, g: Tensor) -> None:
    prev = grads.get(key)
    grads[key] = g if prev is None else prev + g


def _run_backward(output: Tensor, grad_output: Tensor, create_graph: bool) -> dict[int, Tensor]:
    order = _topo_order(output)
    grads: dict[int, Tensor] = {id(output): grad_output}
    leaves: dict[int, Tensor] = {}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None:
                continue
            if node._vjp is None:
                leaves[id(node)] = g
                continue
            if create_graph and node.first_order_only:
                raise NonDifferentiablePrimitive(
                    f"primitive '{node.op}' supports first-order gradients only")
            del grads[id(node)]
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                _accumulate(grads, id(parent), pg)
    grads.update(leaves)
    return grads


def grad(output: Tensor, inputs: Iterable[Tensor], grad_output=None,
         create_graph: bool = False) -> list[Tensor]:
    """Gradients of ``output`` with respect to each of ``inputs``.

    Unreachable inputs receive zeros.  With ``create_graph`` the results are
    differentiable graph nodes.
    """
    inputs = list(inputs)
    if grad_output is None:
        if output.size != 1:
            raise NonScalarOutput(f"output has shape {output.shape}; pass grad_output")
        grad_output = Tensor(np.ones_like(output.data))
    else:
        grad_output = as_tensor(grad_output, dtype=output.dtype)
    if not output.requires_grad:
        return [Tensor(np.zeros_like(x.data)) for x in inputs]
    # inputs that are interior nodes must not be traversed past
    saved = [(x, x._vjp) for x in inputs if x._vjp is not None]
    for x, _ in saved:
        x._vjp = None
    try:
        grads = _run_backward(output, grad_output, create_graph)
    finally:
        for x, vjp in saved:
            x._vjp = vjp
    out = []
    for x in inputs:
        g = grads.get(id(x))
        out.append(Tensor(np.zeros_like(x.data)) if g is None else g)
    return out


def backward(output: Tensor, grad_output=None) -> None:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if grad_output is None:
        if output.size != 1:
            raise NonScalarOutput(f"backward() needs a scalar output, got shape {output.shape}")
        grad_output = Tensor(np.ones_like(output.data))
    else:
        grad_output = as_tensor(grad_output, dtype=output.dtype)
    if not output.requires_grad:
        return
    order = _topo_order(output)
    grads = _run_backward(output, grad_output, create_graph=False)
    for node in order:
        if node._vjp is None and id(node) in grads:
            g = grads[id(node)].data
            node.grad = g.copy() if node.grad is None else node.grad + g
