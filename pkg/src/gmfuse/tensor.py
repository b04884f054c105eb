"""Dense numpy-backed tensors with a small reverse-mode gradient tape.

Tensors are immutable. Operations record onto the active :class:`GradTape`
whenever one of their inputs is tracked by it; :func:`backward` replays the
tape in reverse to produce one gradient per watched leaf.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64
CUMULATIVE_CHUNK = 64

# Set to False only inside benchmark timing loops.
check_finite = True


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class Tensor:
    """Immutable dense row-major array of float64 (or float32) values."""

    __slots__ = ("data",)
    __array_priority__ = 100

    def __init__(self, data, dtype=None):
        if dtype is None:
            src = np.asarray(data)
            dtype = src.dtype if src.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        arr = np.array(data, dtype=dtype, copy=True)
        _finalize(arr)
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = object.__new__(cls)
        if not isinstance(arr, np.ndarray):
            arr = np.asarray(arr)
        _finalize(arr)
        t.data = arr
        return t

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic; operands are broadcast to a common shape first
    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __truediv__(self, other):
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", other, self)

    def __neg__(self):
        return elementwise("neg", self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return reduce("sum", self, axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return reduce("mean", self, axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False) -> "Tensor":
        return reduce("max", self, axis, keepdims=keepdims)


def _finalize(arr: np.ndarray) -> None:
    if check_finite and arr.size and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
    arr.flags.writeable = False
    for stats in _alloc_stats:
        stats.observe(arr)


# --------------------------------------------------------------------------
# allocation tracking


@dataclass
class AllocationStats:
    max_numel: int = 0
    max_shape: tuple[int, ...] = ()
    count: int = 0

    def observe(self, arr: np.ndarray) -> None:
        self.count += 1
        if arr.size > self.max_numel:
            self.max_numel = arr.size
            self.max_shape = arr.shape


_alloc_stats: list[AllocationStats] = []


@contextlib.contextmanager
def track_allocations() -> Iterator[AllocationStats]:
    """Record the largest tensor materialized inside the block."""
    stats = AllocationStats()
    _alloc_stats.append(stats)
    try:
        yield stats
    finally:
        _alloc_stats.remove(stats)


# --------------------------------------------------------------------------
# tape


@dataclass(eq=False)
class Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_active_tape: contextvars.ContextVar["GradTape | None"] = contextvars.ContextVar(
    "gmfuse_active_tape", default=None
)


class GradTape:
    """Ordered record of primitive operations touching watched tensors.

    Use as a context manager; only operations executed inside the ``with``
    block on the creating thread are recorded.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: list[Tensor] = []
        self._tracked: set[int] = set()
        self._token = None

    def __enter__(self) -> "GradTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if id(t) not in self._tracked:
                self._tracked.add(id(t))
                self.leaves.append(t)

    def is_tracked(self, t: Tensor) -> bool:
        return id(t) in self._tracked

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        if id(out) in self._tracked:
            raise RuntimeError("tape cycle: output already recorded")
        self._tracked.add(id(out))
        self.nodes.append(Node(out, inputs, vjp))


def active_tape() -> GradTape | None:
    return _active_tape.get()


def custom_op(data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap ``data`` as the output of a primitive with the given vector-Jacobian product.

    ``vjp(g)`` receives the output adjoint and returns one array (or None) per input.
    """
    out = Tensor._wrap(data)
    tape = _active_tape.get()
    if tape is not None and any(tape.is_tracked(t) for t in inputs):
        tape._record(out, tuple(inputs), vjp)
    return out


def backward(tape: GradTape, output: Tensor) -> tuple[Tensor, ...]:
    """Gradients of scalar ``output`` with respect to every leaf watched by ``tape``."""
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    adj: dict[int, np.ndarray] = {}
    if tape.is_tracked(output):
        adj[id(output)] = np.ones_like(output.data)
    for node in reversed(tape.nodes):
        g = adj.pop(id(node.out), None)
        if g is None:
            continue
        grads = node.vjp(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not tape.is_tracked(inp):
                continue
            if gi.shape != inp.shape:
                raise RuntimeError(
                    f"vjp returned shape {gi.shape} for input of shape {inp.shape}"
                )
            key = id(inp)
            adj[key] = adj[key] + gi if key in adj else gi
    return tuple(
        Tensor._wrap(np.array(adj.get(id(leaf), np.zeros_like(leaf.data))))
        for leaf in tape.leaves
    )


# --------------------------------------------------------------------------
# helpers


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    if dtype is None and not isinstance(x, np.ndarray):
        dtype = DEFAULT_DTYPE
    return Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


# --------------------------------------------------------------------------
# elementwise

UNARY = ("exp", "sigmoid", "softplus", "neg", "tanh", "relu", "log")
BINARY = ("add", "sub", "mul", "div", "max")


def elementwise(op: str, a: Tensor, b: Tensor | float | None = None) -> Tensor:
    """Apply an elementwise op. ``b`` must equal ``a``'s shape or broadcast into it."""
    a = as_tensor(a)
    if op in UNARY:
        if b is not None:
            raise TypeError(f"{op} takes one operand")
        return _unary(op, a)
    if op not in BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if b is None:
        raise TypeError(f"{op} takes two operands")
    b = as_tensor(b, like=a)
    try:
        ok = np.broadcast_shapes(a.shape, b.shape) == a.shape
    except ValueError:
        ok = False
    if not ok:
        raise ShapeError(f"cannot apply {op} to shapes {a.shape} and {b.shape}")
    x, y = a.data, b.data
    if op == "add":
        out = x + y
        vjp = lambda g: (g, _unbroadcast(g, y.shape))
    elif op == "sub":
        out = x - y
        vjp = lambda g: (g, _unbroadcast(-g, y.shape))
    elif op == "mul":
        out = x * y
        vjp = lambda g: (g * y, _unbroadcast(g * x, y.shape))
    elif op == "div":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = x / y
        vjp = lambda g: (g / y, _unbroadcast(-g * out / y, y.shape))
    else:  # max; ties send the gradient to the first operand
        out = np.maximum(x, y)
        mask = x >= y
        vjp = lambda g: (np.where(mask, g, 0.0), _unbroadcast(np.where(mask, 0.0, g), y.shape))
    return custom_op(np.asarray(out, dtype=x.dtype), (a, b), vjp)


def _unary(op: str, a: Tensor) -> Tensor:
    x = a.data
    if op == "exp":
        with np.errstate(under="ignore", over="ignore"):
            out = np.exp(x)
        vjp = lambda g: (g * out,)
    elif op == "sigmoid":
        out = _sigmoid(x)
        vjp = lambda g: (g * out * (1.0 - out),)
    elif op == "softplus":
        out = np.logaddexp(0.0, x).astype(x.dtype, copy=False)
        vjp = lambda g: (g * _sigmoid(x),)
    elif op == "neg":
        out = -x
        vjp = lambda g: (-g,)
    elif op == "tanh":
        out = np.tanh(x)
        vjp = lambda g: (g * (1.0 - out * out),)
    elif op == "relu":
        out = np.maximum(x, 0.0).astype(x.dtype, copy=False)
        vjp = lambda g: (np.where(x > 0, g, 0.0),)
    else:  # log
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(x)
        vjp = lambda g: (g / x,)
    return custom_op(out, (a,), vjp)


def _binary(op: str, a, b) -> Tensor:
    like = a if isinstance(a, Tensor) else b
    a = as_tensor(a, like=like)
    b = as_tensor(b, like=like)
    if a.shape != b.shape:
        try:
            full = np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"cannot apply {op} to shapes {a.shape} and {b.shape}") from None
        if full != a.shape:
            a = broadcast_to(a, full)
    return elementwise(op, a, b)


def exp(a: Tensor) -> Tensor:
    return elementwise("exp", a)


def sigmoid(a: Tensor) -> Tensor:
    return elementwise("sigmoid", a)


def softplus(a: Tensor) -> Tensor:
    return elementwise("softplus", a)


def tanh(a: Tensor) -> Tensor:
    return elementwise("tanh", a)


def relu(a: Tensor) -> Tensor:
    return elementwise("relu", a)


def log(a: Tensor) -> Tensor:
    return elementwise("log", a)


def maximum(a, b) -> Tensor:
    return _binary("max", a, b)


# --------------------------------------------------------------------------
# reductions


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def pairwise_sum(x: np.ndarray, axis: int) -> np.ndarray:
    # numpy sums a contiguous last axis pairwise
    moved = np.ascontiguousarray(np.moveaxis(x, axis, -1))
    return moved.sum(axis=-1)


def chunked_cumulative(x: np.ndarray, axis: int, op: str, chunk: int = CUMULATIVE_CHUNK) -> np.ndarray:
    """Inclusive cumulative sum or product evaluated chunk-wise.

    Each chunk accumulates locally and the chunk totals are combined
    recursively, so rounding error grows with log(L) rather than L.
    """
    moved = np.moveaxis(x, axis, -1)
    L = moved.shape[-1]
    ufunc = np.add if op == "sum" else np.multiply
    if L <= chunk:
        out = ufunc.accumulate(moved, axis=-1)
        return np.moveaxis(out, -1, axis)
    n = -(-L // chunk)
    pad = n * chunk - L
    identity = 0.0 if op == "sum" else 1.0
    if pad:
        widths = [(0, 0)] * (moved.ndim - 1) + [(0, pad)]
        moved = np.pad(moved, widths, constant_values=identity)
    blocks = moved.reshape(moved.shape[:-1] + (n, chunk))
    local = ufunc.accumulate(blocks, axis=-1)
    totals = chunked_cumulative(local[..., -1], -1, op, chunk)
    carry = np.concatenate(
        [np.full(totals.shape[:-1] + (1,), identity, dtype=x.dtype), totals[..., :-1]], axis=-1
    )
    out = ufunc(local, carry[..., None]).reshape(moved.shape)[..., :L]
    return np.moveaxis(out, -1, axis)


def reduce(op: str, a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    """Reduce along ``axis`` with ``op`` in {sum, mean, max, cumsum, cumprod}."""
    a = as_tensor(a)
    x = a.data
    if op in ("cumsum", "cumprod"):
        if axis is None or isinstance(axis, tuple):
            raise ShapeError("cumulative reductions need a single axis")
        ax = _normalize_axis(axis, x.ndim)
        kind = "sum" if op == "cumsum" else "prod"
        out = chunked_cumulative(x, ax, kind)
        if op == "cumsum":
            vjp = lambda g: (np.flip(chunked_cumulative(np.flip(g, ax), ax, "sum"), ax),)
        else:
            def vjp(g):
                if np.any(x == 0):
                    raise FloatingPointError("cumprod gradient needs nonzero inputs")
                rev = np.flip(chunked_cumulative(np.flip(g * out, ax), ax, "sum"), ax)
                return (rev / x,)
        return custom_op(out, (a,), vjp)

    if axis is None:
        axes = tuple(range(x.ndim))
    elif isinstance(axis, tuple):
        axes = tuple(sorted(_normalize_axis(ax, x.ndim) for ax in axis))
    else:
        axes = (_normalize_axis(axis, x.ndim),)
    count = int(np.prod([x.shape[ax] for ax in axes])) if axes else 1
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    out_shape = kept_shape if keepdims else tuple(n for i, n in enumerate(x.shape) if i not in axes)

    if op in ("sum", "mean"):
        out = x
        for ax in reversed(axes):
            out = pairwise_sum(out, ax)
        if op == "mean":
            if count == 0:
                raise ShapeError("empty reduction")
            out = out / count
        out = np.asarray(out, dtype=x.dtype).reshape(out_shape)
        scale = 1.0 if op == "sum" else 1.0 / count
        vjp = lambda g: (np.broadcast_to(g.reshape(kept_shape) * scale, x.shape).copy(),)
        return custom_op(out, (a,), vjp)
    if op == "max":
        if count == 0:
            raise ShapeError("empty reduction")
        out_k = x.max(axis=axes, keepdims=True)
        mask = x == out_k
        ties = mask.sum(axis=axes, keepdims=True)
        vjp = lambda g: (np.where(mask, g.reshape(kept_shape) / ties, 0.0).astype(x.dtype),)
        return custom_op(out_k.reshape(out_shape), (a,), vjp)
    raise ValueError(f"unknown reduction {op!r}")


# --------------------------------------------------------------------------
# linear algebra and shape plumbing


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot matmul shapes {a.shape} and {b.shape}")
    x, y = a.data, b.data
    out = np.matmul(x, y)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(y, -1, -2))
        gb = np.matmul(np.swapaxes(x, -1, -2), g)
        return _unbroadcast(ga, x.shape), _unbroadcast(gb, y.shape)

    return custom_op(out, (a, b), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    out = a.data.reshape(shape)
    return custom_op(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    return custom_op(out, (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"cannot broadcast shape {a.shape} to {shape}") from None
    src = a.shape
    return custom_op(out, (a,), lambda g: (_unbroadcast(g, src),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.array(x[index])
    basic = _is_basic_index(index)

    def vjp(g):
        z = np.zeros_like(x)
        if basic:
            z[index] = g
        else:
            np.add.at(z, index, g)
        return (z,)

    return custom_op(out, (a,), vjp)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices of ``a`` along ``axis``."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    ax = _normalize_axis(axis, a.ndim)
    x = a.data
    out = np.take(x, idx, axis=ax)

    def vjp(g):
        z = np.zeros_like(x)
        zm = np.moveaxis(z, ax, 0)
        np.add.at(zm, idx, np.moveaxis(g, ax, 0))
        return (z,)

    return custom_op(out, (a,), vjp)


def pad(a: Tensor, widths) -> Tensor:
    """Zero-pad; ``widths`` is one (before, after) pair per axis."""
    a = as_tensor(a)
    widths = [tuple(w) for w in widths]
    out = np.pad(a.data, widths)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return custom_op(out, (a,), lambda g: (g[sl],))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = _normalize_axis(axis, ts[0].ndim)
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return custom_op(out, tuple(ts), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    return custom_op(out, tuple(ts), lambda g: tuple(np.moveaxis(g, axis, 0)))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    # shift by a constant; softmax is shift invariant so the gradient is exact
    shift = a.data.max(axis=axis, keepdims=True)
    e = exp(a - Tensor._wrap(np.array(shift)))
    return e / e.sum(axis=axis, keepdims=True)


def zeros(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor._wrap(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor._wrap(np.ones(shape, dtype=dtype))
