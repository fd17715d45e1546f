"""Dense float tensors with reverse-mode automatic differentiation.

Every value is a numpy array of rank <= 4 in float32 (default) or float64
(gradient checking). Operations build a tape; ``Tensor.backward`` walks it
once in reverse topological order. All operations are pure with respect to
their inputs: input arrays are never written to.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """A tensor argument violates a shape or dtype precondition."""


class NumericError(RuntimeError):
    """A non-finite value appeared where the contract requires finiteness."""


_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Array value plus optional gradient slot and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None and not isinstance(data, (np.ndarray, np.generic)):
            dtype = np.float32
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim > 4:
            raise ShapeError(f"tensor rank {arr.ndim} exceeds 4 (shape {arr.shape})")
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad of every reachable tensor."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # Arithmetic sugar; all defined in terms of the module-level primitives.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def require_finite(t: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values after {where}")
    return t


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


def _match_dtypes(a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")


# ---------------------------------------------------------------------------
# Elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _match_dtypes(a, b)
    out = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _match_dtypes(a, b)
    out = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, -_unbroadcast(g, b.data.shape))

    return _node(out, (a, b), bw)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = as_tensor(a)
        c = a.data.dtype.type(b)
        out = a.data * c

        def bw_scalar(g):
            _accum(a, g * c)

        return _node(out, (a,), bw_scalar)
    a, b = as_tensor(a), as_tensor(b)
    _match_dtypes(a, b)
    out = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), bw)


def absolute(a) -> Tensor:
    """Elementwise |a|; subgradient 0 at the kink."""
    a = as_tensor(a)
    out = np.abs(a.data)

    def bw(g):
        _accum(a, g * np.sign(a.data))

    return _node(out, (a,), bw)


# ---------------------------------------------------------------------------
# Matrix product and reductions


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    _match_dtypes(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul requires rank >= 2 operands")
    out = a.data @ b.data

    def bw(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _node(out, (a, b), bw)


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(out, (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    inv = a.data.dtype.type(1.0 / count)
    out = a.data.mean(axis=axes, keepdims=keepdims, dtype=a.data.dtype)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g * inv, a.data.shape).copy())

    return _node(out, (a,), bw)


# ---------------------------------------------------------------------------
# Shape manipulation; all pure index permutations or zero-fill embeddings


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape
    out = a.data.reshape(shape)

    def bw(g):
        _accum(a, g.reshape(orig))

    return _node(out, (a,), bw)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))

    def bw(g):
        _accum(a, g.transpose(inv))

    return _node(out, (a,), bw)


def roll2d(a, shift_h: int, shift_w: int, axes: tuple[int, int]) -> Tensor:
    """Toroidal roll along two axes; gradient rolls back."""
    a = as_tensor(a)
    out = np.roll(a.data, (shift_h, shift_w), axis=axes)

    def bw(g):
        _accum(a, np.roll(g, (-shift_h, -shift_w), axis=axes))

    return _node(out, (a,), bw)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; gradient zero-fills the complement."""
    a = as_tensor(a)
    axis = axis % a.data.ndim
    idx = tuple(slice(start, stop) if i == axis else slice(None) for i in range(a.data.ndim))
    out = a.data[idx].copy()

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _node(out, (a,), bw)


def take_rows(table, index: np.ndarray) -> Tensor:
    """table[index] for an integer index array; gradient scatter-adds."""
    table = as_tensor(table)
    index = np.asarray(index)
    out = table.data[index]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        _accum(table, gt)

    return _node(out, (table,), bw)


def _reflect_index(n: int, before: int, after: int) -> np.ndarray:
    """Source indices for np.pad(..., mode='reflect') along one axis."""
    if max(before, after) >= n:
        raise ShapeError(f"reflection pad ({before},{after}) needs axis extent > pad, got {n}")
    idx = np.arange(-before, n + after)
    period = 2 * (n - 1) if n > 1 else 1
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def pad_reflect_hw(a, pads: tuple[int, int, int, int]) -> Tensor:
    """Reflection-pad the trailing two axes of an NCHW tensor.

    ``pads`` is (top, bottom, left, right).
    """
    a = as_tensor(a)
    if a.data.ndim != 4:
        raise ShapeError("pad_reflect_hw expects a rank-4 tensor")
    top, bottom, left, right = pads
    if min(pads) < 0:
        raise ShapeError(f"negative pad {pads}")
    if top == bottom == left == right == 0:
        return a
    n, c, h, w = a.data.shape
    rows = _reflect_index(h, top, bottom)
    cols = _reflect_index(w, left, right)
    out = a.data[:, :, rows[:, None], cols[None, :]]

    def bw(g):
        g_rows = np.moveaxis(g, 2, 0)
        tmp = np.zeros((h, n, c, w + left + right), dtype=g.dtype)
        np.add.at(tmp, rows, g_rows)
        g_cols = np.moveaxis(np.moveaxis(tmp, 0, 2), 3, 0)
        tmp2 = np.zeros((w, n, c, h), dtype=g.dtype)
        np.add.at(tmp2, cols, g_cols)
        _accum(a, np.moveaxis(tmp2, 0, 3))

    return _node(out, (a,), bw)


def crop_hw(a, h: int, w: int) -> Tensor:
    """Keep the top-left h x w corner of the trailing two axes."""
    a = as_tensor(a)
    if a.data.ndim != 4:
        raise ShapeError("crop_hw expects a rank-4 tensor")
    out = a.data[:, :, :h, :w].copy()

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, :, :h, :w] = g
        _accum(a, full)

    return _node(out, (a,), bw)


def parameters_vector_size(params: Iterable[Tensor]) -> int:
    return sum(p.data.size for p in params)
