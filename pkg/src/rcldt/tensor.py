"""Dense-tensor arithmetic with reverse-mode automatic differentiation.

The array payload is a numpy ndarray; the differentiation machinery (graph
construction, topological backward sweep, broadcast-aware gradient
accumulation) lives here. The op set is deliberately small: the elementwise
family, matmul, reductions, layer_norm, softmax over the last dimension,
and the structural ops (reshape / transpose / narrow / concat / embedding
lookup) that a patch-token transformer needs. No convolutions, no GPU.

Two precision modes are supported per run: float32 for training, float64
for gradient-check tests. Ops inherit the dtype of their inputs.

GELU uses the tanh approximation
    gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
which tests pin exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

# Strict mode upgrades silent non-finite results (division by zero) to errors.
_strict = False


def set_strict(enabled: bool) -> None:
    global _strict
    _strict = bool(enabled)


def strict_enabled() -> bool:
    return _strict


class Tensor:
    """A shaped float array, optionally tracked by the autodiff graph.

    Invariants: ``grad``, when present, has the same shape as ``data``;
    tensors are immutable after construction except for gradient
    accumulation during ``backward``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

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

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        # Rebinding (never in-place mutation) keeps view-aliased gradients safe.
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(np.array(data, copy=True), requires_grad=True, dtype=dtype)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape`` by summing added axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------------------
# elementwise ops
#
# Python-scalar operands take a fast path that never wraps them in arrays:
# a 0-d float64 array would silently promote float32 graphs to float64.


def add(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        out = _make(a.data + b, (a,), None)
        if out.requires_grad:
            out._backward = lambda g: a._accum(g)
        return out
    if isinstance(a, (int, float)) and isinstance(b, Tensor):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data + b.data, (a, b), None)
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))
        out._backward = bw
    return out


def sub(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        return add(a, -b)
    if isinstance(a, (int, float)) and isinstance(b, Tensor):
        out = _make(a - b.data, (b,), None)
        if out.requires_grad:
            out._backward = lambda g: b._accum(-g)
        return out
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data - b.data, (a, b), None)
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g, b.shape))
        out._backward = bw
    return out


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor):
        out = _make(a.data * b, (a,), None)
        if out.requires_grad:
            out._backward = lambda g: a._accum(g * b)
        return out
    if isinstance(a, (int, float)) and isinstance(b, Tensor):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data * b.data, (a, b), None)
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))
        out._backward = bw
    return out


def div(a, b) -> Tensor:
    if isinstance(b, (int, float)) and isinstance(a, Tensor) and b != 0:
        return mul(a, 1.0 / b)
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    if _strict and not np.all(np.isfinite(data)):
        raise NumericError("division produced a non-finite value in strict mode")
    out = _make(data, (a, b), None)
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * data / b.data, b.shape))
        out._backward = bw
    return out


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    out = _make(y, (x,), None)
    if out.requires_grad:
        out._backward = lambda g: x._accum(g * y)
    return out


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    out = _make(y, (x,), None)
    if out.requires_grad:
        out._backward = lambda g: x._accum(g * (0.5 / y))
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = _make(y, (x,), None)
    if out.requires_grad:
        out._backward = lambda g: x._accum(g * (1.0 - y * y))
    return out


def gelu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    inner = x2 * xd
    inner *= _GELU_A
    inner += xd
    inner *= _GELU_C
    u = np.tanh(inner)
    y = u + 1.0
    y *= xd
    y *= 0.5
    out = _make(y, (x,), None)
    if out.requires_grad:
        def bw(g):
            du = x2 * (3.0 * _GELU_A)
            du += 1.0
            du *= _GELU_C
            term = 1.0 - u * u
            term *= du
            term *= xd
            term += 1.0
            term += u
            term *= g
            term *= 0.5
            x._accum(term)
        out._backward = bw
    return out


def softmax(x) -> Tensor:
    """Softmax over the last dimension; rows sum to 1."""
    x = as_tensor(x)
    y = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)
    out = _make(y, (x,), None)
    if out.requires_grad:
        def bw(g):
            dot = (g * y).sum(axis=-1, keepdims=True)
            gx = g - dot
            gx *= y
            x._accum(gx)
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# matmul and reductions


def _bw_matmul_left(g: np.ndarray, bd: np.ndarray, a_shape: tuple) -> np.ndarray:
    """Gradient w.r.t. the left operand: g @ b^T, via the fastest BLAS path."""
    if bd.ndim == 2:
        return (g.reshape(-1, g.shape[-1]) @ bd.T).reshape(a_shape)
    if g.shape[:-2] == bd.shape[:-2] and g.dtype == bd.dtype:
        # same batch layout: per-slice 2-d dots consume transposed views natively
        g3 = g.reshape(-1, g.shape[-2], g.shape[-1])
        b3 = bd.reshape(-1, bd.shape[-2], bd.shape[-1])
        out = np.empty((g3.shape[0], g3.shape[1], b3.shape[-2]), dtype=g.dtype)
        for i in range(g3.shape[0]):
            np.dot(g3[i], b3[i].T, out=out[i])
        return out.reshape(a_shape)
    return _unbroadcast(g @ np.ascontiguousarray(bd.swapaxes(-1, -2)), a_shape)


def _bw_matmul_right(ad: np.ndarray, g: np.ndarray, b_shape: tuple) -> np.ndarray:
    """Gradient w.r.t. the right operand: a^T @ g."""
    if len(b_shape) == 2:
        return ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    if ad.shape[:-2] == g.shape[:-2] and ad.dtype == g.dtype:
        a3 = ad.reshape(-1, ad.shape[-2], ad.shape[-1])
        g3 = g.reshape(-1, g.shape[-2], g.shape[-1])
        out = np.empty((a3.shape[0], a3.shape[-1], g3.shape[-1]), dtype=g.dtype)
        for i in range(a3.shape[0]):
            np.dot(a3[i].T, g3[i], out=out[i])
        return _unbroadcast(out.reshape(ad.shape[:-2] + out.shape[-2:]), b_shape)
    return _unbroadcast(np.ascontiguousarray(ad.swapaxes(-1, -2)) @ g, b_shape)


def matmul(a, b) -> Tensor:
    """Matrix product with broadcasting of leading batch dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul requires >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = _make(a.data @ b.data, (a, b), None)
    if out.requires_grad:
        def bw(g):
            g = np.ascontiguousarray(g)
            if a.requires_grad:
                a._accum(_bw_matmul_left(g, b.data, a.shape))
            if b.requires_grad:
                b._accum(_bw_matmul_right(a.data, g, b.shape))
        out._backward = bw
    return out


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), None)
    if out.requires_grad:
        def bw(g):
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, axes)
            x._accum(np.broadcast_to(g, x.shape))
        out._backward = bw
    return out


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), None)
    if out.requires_grad:
        count = x.size / out.size
        def bw(g):
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, axes)
            x._accum(np.broadcast_to(g / count, x.shape))
        out._backward = bw
    return out


def layer_norm(x, gain=None, bias=None, eps: float = 1e-6) -> Tensor:
    """Normalize over the last dimension to zero mean / unit variance, then
    apply the optional elementwise affine ``y * gain + bias``."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    g_t = as_tensor(gain) if gain is not None else None
    b_t = as_tensor(bias) if bias is not None else None
    data = y
    if g_t is not None:
        data = data * g_t.data
    if b_t is not None:
        data = data + b_t.data
    parents = tuple(p for p in (x, g_t, b_t) if p is not None)
    out = _make(data, parents, None)
    if out.requires_grad:
        def bw(g):
            dy = g * g_t.data if g_t is not None else g
            if x.requires_grad:
                m1 = dy.mean(axis=-1, keepdims=True)
                m2 = (dy * y).mean(axis=-1, keepdims=True)
                x._accum(inv * (dy - m1 - y * m2))
            if g_t is not None and g_t.requires_grad:
                g_t._accum(_unbroadcast(g * y, g_t.shape))
            if b_t is not None and b_t.requires_grad:
                b_t._accum(_unbroadcast(g, b_t.shape))
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# structural ops


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = _make(x.data.reshape(shape), (x,), None)
    if out.requires_grad:
        out._backward = lambda g: x._accum(g.reshape(x.shape))
    return out


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    out = _make(x.data.transpose(axes), (x,), None)
    if out.requires_grad:
        inv = tuple(np.argsort(axes))
        out._backward = lambda g: x._accum(g.transpose(inv))
    return out


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    x = as_tensor(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _make(x.data[idx], (x,), None)
    if out.requires_grad:
        def bw(g):
            full = np.zeros_like(x.data)
            full[idx] = g
            x._accum(full)
        out._backward = bw
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None)
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def bw(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    t._accum(g[tuple(idx)])
        out._backward = bw
    return out


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; the gradient scatter-adds into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = _make(table.data[ids], (table,), None)
    if out.requires_grad:
        def bw(g):
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            table._accum(full)
        out._backward = bw
    return out


# ---------------------------------------------------------------------------
# backward sweep


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable ``requires_grad`` tensor.

    ``loss`` must be scalar. Accumulation is additive: tensors used several
    times receive the sum of all path contributions.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
