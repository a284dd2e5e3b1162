"""Dense tensors with reverse-mode automatic differentiation.

Arrays are numpy ndarrays; image batches are channel-last (N, H, W, C).
Every primitive records a backward closure on its output when any input
requires a gradient, and :func:`backward` walks the recorded graph in
reverse topological order.
"""

from __future__ import annotations

import contextlib
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "GraphError",
    "PRIMITIVES",
    "apply_primitive",
    "backward",
    "seeded_init",
    "num_threads",
    "set_num_threads",
    "no_grad",
    "no_grad_array",
]


class ShapeError(ValueError):
    """Input shapes are invalid for an op."""


class DomainError(ValueError):
    """Input values lie outside an op's mathematical domain."""


class GraphError(RuntimeError):
    """Misuse of the recorded graph (non-scalar loss, double backward)."""


# ----------------------------------------------------------------------------
# threading
# ----------------------------------------------------------------------------

_THREADS: int | None = None


def num_threads() -> int:
    """Intra-op worker count; ``ROADCOND_THREADS`` unset or 1 means serial."""
    global _THREADS
    if _THREADS is None:
        raw = os.environ.get("ROADCOND_THREADS", "1")
        try:
            _THREADS = max(1, int(raw))
        except ValueError:
            _THREADS = 1
    return _THREADS


def set_num_threads(n: int) -> None:
    global _THREADS
    _THREADS = max(1, int(n))


def _chunks(n: int, parts: int) -> list[slice]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def _tree_sum(arrays: list[np.ndarray]) -> np.ndarray:
    # fixed pairing order, so results do not depend on scheduling
    while len(arrays) > 1:
        nxt = [arrays[i] + arrays[i + 1] for i in range(0, len(arrays) - 1, 2)]
        if len(arrays) % 2:
            nxt.append(arrays[-1])
        arrays = nxt
    return arrays[0]


# ----------------------------------------------------------------------------
# Tensor
# ----------------------------------------------------------------------------


class Tensor:
    """An ndarray plus an optional gradient and a link into the graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op: str | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._parents = ()
        t._backward = None
        t._op = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar over the primitives
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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not a primitive")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def no_grad_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor._wrap(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], bwd) -> Tensor:
    out = Tensor._wrap(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = bwd
    out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape("add", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape("sub", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _broadcast_shape("mul", a, b)

    def bwd(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("mul", a.data * b.data, (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        bad = float(x.data[x.data <= 0].reshape(-1)[0])
        raise DomainError(f"log: non-positive input {bad!r} in tensor of shape {x.shape}")
    return _make("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make("exp", y, (x,), lambda g: (g * y,))


def sigmoid(x: Tensor) -> Tensor:
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _make("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    y = np.clip(x.data, lo, hi)
    return _make("clip", y, (x,), lambda g: (g * inside,))


# ----------------------------------------------------------------------------
# reductions and shape ops
# ----------------------------------------------------------------------------


def sum(x: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    y = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", np.asarray(y, dtype=x.dtype), (x,), bwd)


def mean(x: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    y = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size / max(1, np.asarray(y).size)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return _make("mean", np.asarray(y, dtype=x.dtype), (x,), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        y = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return _make("reshape", y, (x,), lambda g: (g.reshape(x.shape),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: no inputs")
    nd = xs[0].ndim
    ax = axis % nd
    for t in xs[1:]:
        if t.ndim != nd or any(t.shape[d] != xs[0].shape[d] for d in range(nd) if d != ax):
            raise ShapeError(f"concat: shapes {[t.shape for t in xs]} differ off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in xs])[:-1]

    def bwd(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _make("concat", np.concatenate([t.data for t in xs], axis=ax), xs, bwd)


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """2-D matrix product ``a @ b`` (or ``a @ b.T`` with ``transpose_b``)."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    inner_b = b.shape[1] if transpose_b else b.shape[0]
    if a.shape[1] != inner_b:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}{'.T' if transpose_b else ''}")
    bm = b.data.T if transpose_b else b.data

    def bwd(g):
        ga = g @ bm.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = g.T @ a.data if transpose_b else a.data.T @ g
        return ga, gb

    return _make("matmul", a.data @ bm, (a, b), bwd)


def softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax", y, (x,), bwd)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bwd(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", y, (x,), bwd)


def l2_norm(x: Tensor, eps: float = 0.0) -> Tensor:
    """Scale each last-axis vector to unit length.

    With ``eps == 0`` a zero vector raises; otherwise the norm is floored at ``eps``.
    """
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if eps <= 0.0:
        if np.any(n == 0):
            raise DomainError("l2_norm: zero-norm vector")
        floored = np.zeros_like(n, dtype=bool)
        d = n
    else:
        floored = n < eps
        d = np.where(floored, eps, n).astype(x.dtype)
    y = x.data / d

    def bwd(g):
        proj = np.where(floored, 0.0, (g * y).sum(axis=-1, keepdims=True))
        return ((g - y * proj) / d,)

    return _make("l2_norm", y, (x,), bwd)


# ----------------------------------------------------------------------------
# spatial ops, NHWC
# ----------------------------------------------------------------------------


def _check_nhwc(op: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected (N, H, W, C) input, got {x.shape}")


def _conv_fwd(xp: np.ndarray, w: np.ndarray, stride: int, ho: int, wo: int) -> np.ndarray:
    kh, kw, _, cout = w.shape
    out = np.zeros((xp.shape[0], ho, wo, cout), dtype=np.result_type(xp, w))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
            out += patch @ w[i, j]
    return out


def _conv_bwd(xp: np.ndarray, w: np.ndarray, g: np.ndarray, stride: int, want_x: bool):
    kh, kw, cin, cout = w.shape
    n, ho, wo, _ = g.shape
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp) if want_x else None
    g2 = g.reshape(-1, cout)
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
            gw[i, j] = xp[sl].reshape(-1, cin).T @ g2
            if want_x:
                gxp[sl] += g @ w[i, j].T
    return gw, gxp


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (N, H, W, Cin) with a (KH, KW, Cin, Cout) kernel."""
    _check_nhwc("conv2d", x)
    if w.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (KH, KW, Cin, Cout), got {w.shape}")
    kh, kw, cin, _ = w.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[3]} channels, kernel expects {cin}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} pad={pad}")
    hp, wp = x.shape[1] + 2 * pad, x.shape[2] + 2 * pad
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    parts = _chunks(x.shape[0], num_threads())

    if len(parts) > 1:
        with ThreadPoolExecutor(len(parts)) as ex:
            outs = list(ex.map(lambda s: _conv_fwd(xp[s], w.data, stride, ho, wo), parts))
        y = np.concatenate(outs, axis=0)
    else:
        y = _conv_fwd(xp, w.data, stride, ho, wo)

    def bwd(g):
        want_x = x.requires_grad
        if len(parts) > 1:
            with ThreadPoolExecutor(len(parts)) as ex:
                res = list(ex.map(lambda s: _conv_bwd(xp[s], w.data, g[s], stride, want_x), parts))
            gw = _tree_sum([r[0] for r in res])
            gxp = np.concatenate([r[1] for r in res], axis=0) if want_x else None
        else:
            gw, gxp = _conv_bwd(xp, w.data, g, stride, want_x)
        gx = None
        if want_x:
            gx = gxp[:, pad : pad + x.shape[1], pad : pad + x.shape[2], :] if pad else gxp
        return gx, gw

    return _make("conv2d", y, (x, w), bwd)


def max_pool2d(x: Tensor, size: int = 2, stride: int | None = None) -> Tensor:
    _check_nhwc("max_pool2d", x)
    stride = size if stride is None else stride
    n, h, w, c = x.shape
    if size > h or size > w:
        raise ShapeError(f"max_pool2d: window {size} larger than input {h}x{w}")
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    best = None
    arg = np.zeros((n, ho, wo, c), dtype=np.int32)
    k = 0
    for i in range(size):
        for j in range(size):
            v = x.data[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
            if best is None:
                best = v.copy()
            else:
                upd = v > best
                best = np.where(upd, v, best)
                arg[upd] = k
            k += 1

    def bwd(g):
        gx = np.zeros_like(x.data)
        kk = 0
        for i in range(size):
            for j in range(size):
                gx[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += g * (arg == kk)
                kk += 1
        return (gx,)

    return _make("max_pool2d", best, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_nhwc("global_avg_pool", x)
    n, h, w, c = x.shape
    y = x.data.mean(axis=(1, 2))

    def bwd(g):
        return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).astype(x.dtype),)

    return _make("global_avg_pool", y, (x,), bwd)


def upsample2d(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of (N, H, W, C) by an integer factor."""
    _check_nhwc("upsample2d", x)
    y = x.data.repeat(factor, axis=1).repeat(factor, axis=2)
    n, h, w, c = x.shape

    def bwd(g):
        return (g.reshape(n, h, factor, w, factor, c).sum(axis=(2, 4)),)

    return _make("upsample2d", y, (x,), bwd)


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "relu": relu,
    "max_pool2d": max_pool2d,
    "global_avg_pool": global_avg_pool,
    "reshape": reshape,
    "concat": concat,
    "log": log,
    "exp": exp,
    "sum": sum,
    "mean": mean,
    "softmax": softmax,
    "l2_norm": l2_norm,
    # needed by the networks and losses on top of the core list
    "sigmoid": sigmoid,
    "clip": clip,
    "log_softmax": log_softmax,
    "upsample2d": upsample2d,
}


def apply_primitive(op_kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"unknown primitive {op_kind!r}") from None
    if op_kind == "concat":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)


# ----------------------------------------------------------------------------
# backward
# ----------------------------------------------------------------------------


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


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Leaves listed in ``leaves`` that the loss does not depend on get a zero
    gradient. The graph is released afterwards; a second call on the same
    loss raises :class:`GraphError`.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._op == "<consumed>":
        raise GraphError("backward: graph already consumed; rerun the forward pass")
    order = _topo_order(loss) if loss.requires_grad else []
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.astype(node.dtype) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
    loss._op = "<consumed>"
    if leaves is not None:
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


# ----------------------------------------------------------------------------
# initialisation
# ----------------------------------------------------------------------------


def seeded_init(shape: Sequence[int], scheme: str = "uniform-fan-in", seed: int = 0,
                fan_in: int | None = None, dtype=np.float32, gain: float = 1.0) -> Tensor:
    """Deterministic parameter tensor.

    ``uniform-fan-in`` draws U(-b, b) with b = gain * sqrt(1/fan_in); fan_in
    defaults to the product of all but the last dimension. ``gain=sqrt(6)``
    is He-uniform.
    """
    shape = tuple(int(s) for s in shape)
    if scheme == "zeros":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
    if scheme != "uniform-fan-in":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if fan_in is None:
        fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    bound = gain * np.sqrt(1.0 / fan_in)
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)
