"""Reverse-mode automatic differentiation on 64-bit numpy arrays.

The graph is an append-only tape: every primitive that touches a tracked
input appends one node, so append order is already a topological order and
backward is a single reverse sweep.  A fresh Graph is built per training
step (routing unrolls a data-independent but iteration-count-dependent
chain, so a static graph buys nothing here).

Conventions:
  - all data is float64; scalars are tensors of shape (1,)
  - broadcasting is allowed over size-1 axes only, never over missing axes
    (no implicit rank promotion), which turns most silent shape bugs into
    immediate errors
  - produced tensors are constants of any *later* graph; only tensors with
    requires_grad=True are re-adopted as leaves when a new graph sees them
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .rng import SplitMix64


class ShapeError(ValueError):
    pass


class Tensor:
    """N-dimensional float64 array, optionally tracked by the active graph."""

    __slots__ = ("data", "requires_grad", "node_id", "graph", "grad", "name")

    def __init__(self, data: np.ndarray, requires_grad: bool = False,
                 name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            raise ShapeError("scalar must be shape [1]")
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.graph: Optional["Graph"] = None
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{tag})"

    # operator sugar; python numbers go through the *_scalar primitives so
    # the tensor-tensor broadcast rule stays strict
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(negate(self), float(other))
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / float(other))
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return negate(self)


class Graph:
    """Append-only tape of primitive applications.

    nodes[i] = (op name, output node id, input node ids, vjp callable).
    Inputs always precede their node, so reverse iteration is a valid
    backward order.
    """

    def __init__(self):
        self.nodes: list[tuple] = []
        self.leaves: list[Tensor] = []
        self._next_id = 0

    def __enter__(self) -> "Graph":
        _STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _STACK.pop()
        assert popped is self

    def fresh_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def adopt(self, t: Tensor) -> int:
        """Register a requires_grad tensor as a leaf of this graph."""
        t.graph = self
        t.node_id = self.fresh_id()
        self.leaves.append(t)
        return t.node_id


_STACK: list[Graph] = []


def active_graph() -> Optional[Graph]:
    return _STACK[-1] if _STACK else None


def _live_id(t: Tensor, g: Graph) -> Optional[int]:
    """Node id of t under g, adopting untracked parameters; None if constant."""
    if t.graph is g and t.node_id is not None:
        return t.node_id
    if t.requires_grad:
        return g.adopt(t)
    return None


def _emit(op: str, out_data: np.ndarray, inputs: Sequence[Tensor],
          vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap a forward result, appending a tape node if any input is tracked.

    vjp maps the output cotangent to one cotangent per input (None for
    inputs that are constant by construction).
    """
    out = Tensor(out_data)
    g = active_graph()
    if g is None:
        return out
    ids = [_live_id(t, g) for t in inputs]
    if all(i is None for i in ids):
        return out
    out.graph = g
    out.node_id = g.fresh_id()
    g.nodes.append((op, out.node_id, ids, vjp))
    return out


def backward(loss: Tensor) -> dict:
    """Gradients of a scalar loss w.r.t. every requires_grad leaf.

    Returns {node_id: Tensor}; also sets .grad (a numpy array) on each leaf.
    Leaves never reached by the sweep get zeros of their own shape.
    """
    if loss.shape != (1,):
        raise ShapeError(f"backward needs a scalar loss of shape [1], got "
                         f"{list(loss.shape)}")
    g = loss.graph
    if g is None or loss.node_id is None:
        raise ValueError("loss is not attached to any graph")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones(1)}
    for op, out_id, input_ids, vjp in reversed(g.nodes):
        gout = grads.pop(out_id, None)
        if gout is None:
            continue
        for nid, ginp in zip(input_ids, vjp(gout)):
            if nid is None or ginp is None:
                continue
            acc = grads.get(nid)
            grads[nid] = ginp if acc is None else acc + ginp
    out: dict[int, Tensor] = {}
    for leaf in g.leaves:
        ga = grads.get(leaf.node_id)
        if ga is None:
            ga = np.zeros_like(leaf.data)
        leaf.grad = ga
        out[leaf.node_id] = Tensor(ga)
    return out


# ---------------------------------------------------------------------------
# tensor factories

def _check_shape(shape) -> tuple:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("scalar must be shape [1]")
    for s in shape:
        if s < 1:
            raise ShapeError(f"shape entries must be >= 1, got {list(shape)}")
    return shape


def zeros(shape, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(np.zeros(_check_shape(shape)), requires_grad, name)


def ones(shape, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(np.ones(_check_shape(shape)), requires_grad, name)


def full(shape, value: float, requires_grad: bool = False,
         name: str = "") -> Tensor:
    return Tensor(np.full(_check_shape(shape), float(value)),
                  requires_grad, name)


def uniform(shape, lo: float, hi: float, seed: int,
            requires_grad: bool = False, name: str = "") -> Tensor:
    shape = _check_shape(shape)
    if not lo < hi:
        raise ValueError(f"uniform needs lo < hi, got [{lo}, {hi})")
    n = int(np.prod(shape))
    vals = SplitMix64(seed).uniform(n, lo, hi).reshape(shape)
    return Tensor(vals, requires_grad, name)


def normal(shape, mu: float, sigma: float, seed: int,
           requires_grad: bool = False, name: str = "") -> Tensor:
    shape = _check_shape(shape)
    if sigma < 0:
        raise ValueError(f"normal needs sigma >= 0, got {sigma}")
    n = int(np.prod(shape))
    vals = SplitMix64(seed).normal(n, mu, sigma).reshape(shape)
    return Tensor(vals, requires_grad, name)


def constant(data, name: str = "") -> Tensor:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return Tensor(arr, name=name)


def scalar(value: float) -> Tensor:
    return Tensor(np.array([float(value)]))


def parameter(data, name: str = "") -> Tensor:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return Tensor(arr.copy(), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# broadcasting helpers (size-1 axes only)

def _broadcast_check(op: str, a: tuple, b: tuple) -> tuple:
    if len(a) != len(b):
        raise ShapeError(f"{op}: incompatible shapes {list(a)} and {list(b)} "
                         f"(rank promotion is not allowed)")
    out = []
    for da, db in zip(a, b):
        if da == db or da == 1 or db == 1:
            out.append(max(da, db))
        else:
            raise ShapeError(f"{op}: incompatible shapes {list(a)} and "
                             f"{list(b)}")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum the cotangent over axes the forward pass broadcast from size 1."""
    axes = tuple(i for i, (ds, dg) in enumerate(zip(shape, g.shape))
                 if ds == 1 and dg != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _norm_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = sorted(a % ndim for a in axis)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate reduction axes {list(axis)}")
    return tuple(axes)


# ---------------------------------------------------------------------------
# elementwise and scalar primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a.shape, b.shape)
    return _emit("add", a.data + b.data, [a, b],
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("sub", a.shape, b.shape)
    return _emit("sub", a.data - b.data, [a, b],
                 lambda g: (_unbroadcast(g, a.shape),
                            _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("mul", a.shape, b.shape)
    return _emit("mul", a.data * b.data, [a, b],
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a/b; caller guarantees b is nonzero."""
    _broadcast_check("div", a.shape, b.shape)
    inv = 1.0 / b.data
    out = a.data * inv
    return _emit("div", out, [a, b],
                 lambda g: (_unbroadcast(g * inv, a.shape),
                            _unbroadcast(-g * out * inv, b.shape)))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _emit("add_scalar", a.data + c, [a], lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _emit("mul_scalar", a.data * c, [a], lambda g: (g * c,))


def negate(a: Tensor) -> Tensor:
    return _emit("negate", -a.data, [a], lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", out, [a], lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    """Natural log; caller guarantees strictly positive input."""
    return _emit("log", np.log(a.data), [a], lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    """Caller guarantees input > 0 wherever gradients matter."""
    out = np.sqrt(a.data)
    return _emit("sqrt", out, [a], lambda g: (g * (0.5 / out),))


def square(a: Tensor) -> Tensor:
    return _emit("square", a.data * a.data, [a],
                 lambda g: (g * (2.0 * a.data),))


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at exactly 0
    return _emit("abs", np.abs(a.data), [a],
                 lambda g: (g * np.sign(a.data),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit("tanh", out, [a], lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so neither branch exponentiates a large positive value
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit("sigmoid", out, [a], lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0.0), [a],
                 lambda g: (np.where(mask, g, 0.0),))


# ---------------------------------------------------------------------------
# reductions

def _reduce_out(data: np.ndarray) -> np.ndarray:
    # full reductions collapse to the (1,) scalar convention
    return data.reshape(1) if data.ndim == 0 else data


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    out = _reduce_out(a.data.sum(axis=axes, keepdims=keepdims))

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g.reshape(
            tuple(d for i, d in enumerate(a.shape) if i not in axes)), axes)
        return (np.broadcast_to(gk, a.shape).copy(),)

    return _emit("sum", out, [a], vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    out = _reduce_out(a.data.mean(axis=axes, keepdims=keepdims))

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g.reshape(
            tuple(d for i, d in enumerate(a.shape) if i not in axes)), axes)
        return (np.broadcast_to(gk, a.shape) / count,)

    return _emit("mean", out, [a], vjp)


def max_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    kept = a.data.max(axis=axes, keepdims=True)
    out = _reduce_out(kept if keepdims else kept.reshape(
        tuple(d for i, d in enumerate(a.shape) if i not in axes)))
    # ties share the cotangent equally, which keeps the vjp deterministic
    mask = (a.data == kept).astype(np.float64)
    mask /= mask.sum(axis=axes, keepdims=True)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g.reshape(
            tuple(d for i, d in enumerate(a.shape) if i not in axes)), axes)
        return (mask * gk,)

    return _emit("max", out, [a], vjp)


# ---------------------------------------------------------------------------
# shape primitives

def reshape(a: Tensor, shape) -> Tensor:
    shape = _check_shape(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {list(a.shape)} as "
                         f"{list(shape)}")
    return _emit("reshape", a.data.reshape(shape), [a],
                 lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"transpose: axes {list(axes)} do not permute rank "
                         f"{a.data.ndim}")
    inv = tuple(np.argsort(axes))
    return _emit("transpose", a.data.transpose(axes), [a],
                 lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    axis = axis % tensors[0].data.ndim
    for t in tensors[1:]:
        if len(t.shape) != len(tensors[0].shape) or any(
                i != axis and d != tensors[0].shape[i]
                for i, d in enumerate(t.shape)):
            raise ShapeError(f"concat: incompatible shapes "
                             f"{list(tensors[0].shape)} and {list(t.shape)}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", np.concatenate([t.data for t in tensors], axis),
                 list(tensors), vjp)


def slice_(a: Tensor, key: Sequence[slice]) -> Tensor:
    """Basic slicing (non-negative start/stop/step); gradient scatters back."""
    key = tuple(key)

    def vjp(g):
        full_g = np.zeros(a.shape)
        full_g[key] = g
        return (full_g,)

    out = a.data[key]
    if out.ndim == 0:
        raise ShapeError("slice: integer indexing would drop rank; use "
                         "length-1 slices")
    return _emit("slice", out.copy(), [a], vjp)


# ---------------------------------------------------------------------------
# linear algebra and normalizers

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: need rank >= 2, got {list(a.shape)} and "
                         f"{list(b.shape)}")
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"matmul: incompatible shapes {list(a.shape)} and "
                         f"{list(b.shape)} (rank promotion is not allowed)")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {list(a.shape)} and "
                         f"{list(b.shape)}")
    _broadcast_check("matmul", a.shape[:-2], b.shape[:-2])
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _emit("matmul", out, [a, b], vjp)


def softmax(a: Tensor, axis: int) -> Tensor:
    axis = axis % a.data.ndim
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, [a], vjp)


def l2norm(a: Tensor, axis: int, eps: float = 1e-12) -> Tensor:
    """Unit-normalize along axis; eps keeps the zero vector finite."""
    axis = axis % a.data.ndim
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True) + eps)
    out = a.data / n

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - out * dot) / n,)

    return _emit("l2norm", out, [a], vjp)


# ---------------------------------------------------------------------------
# generic dispatch, used by tests and anything driving ops by name

PRIMITIVES: dict[str, Callable] = {
    "add": add, "sub": sub, "mul": mul, "div": div, "matmul": matmul,
    "sum": sum_, "mean": mean, "max": max_,
    "exp": exp, "log": log, "sqrt": sqrt, "square": square,
    "abs": absolute, "negate": negate,
    "reshape": reshape, "transpose": transpose, "concat": concat,
    "slice": slice_,
    "tanh": tanh, "sigmoid": sigmoid, "relu": relu,
    "softmax": softmax, "l2norm": l2norm,
    "add_scalar": add_scalar, "mul_scalar": mul_scalar,
}


def apply_primitive(op: str, inputs: Sequence[Tensor], attrs: dict = None):
    if op not in PRIMITIVES:
        raise KeyError(f"unknown primitive {op!r}")
    fn = PRIMITIVES[op]
    attrs = attrs or {}
    if op == "concat":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# finite-difference gradient checking

def grad_check(f: Callable[..., Tensor], xs, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central finite differences.

    f maps the tensors in xs (a Tensor or list of Tensors) to a scalar and
    must be deterministic; freeze any stochastic masks before calling.
    Error per component is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must be in [1e-7, 1e-3], got {eps}")
    single = isinstance(xs, Tensor)
    tensors = [xs] if single else list(xs)
    for t in tensors:
        t.requires_grad = True

    with Graph():
        loss = f(xs) if single else f(*tensors)
        if loss.shape != (1,):
            raise ShapeError("grad_check: f must return a scalar of shape [1]")
        backward(loss)
    ad_grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]

    def eval_loss() -> float:
        out = f(xs) if single else f(*tensors)
        return out.item()

    worst = 0.0
    for t, g_ad in zip(tensors, ad_grads):
        flat = t.data.reshape(-1)
        gf = g_ad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            fp = eval_loss()
            flat[i] = saved - eps
            fm = eval_loss()
            flat[i] = saved
            g_fd = (fp - fm) / (2.0 * eps)
            denom = max(1.0, abs(gf[i]), abs(g_fd))
            worst = max(worst, abs(gf[i] - g_fd) / denom)
    return worst
