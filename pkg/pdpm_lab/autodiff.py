"""
Reverse-Mode Autodiff
=====================
A small define-by-run autodiff engine over float64 numpy arrays.

Every op evaluates eagerly and records a node (inputs + backward rule). Node
ids grow with creation order, so sorting reachable nodes by descending id is
a valid reverse topological order; `backward` visits each node exactly once
and accumulates gradients additively.

Backward rules are written with the same differentiable ops, so calling
`backward(..., create_graph=True)` yields gradients that can themselves be
differentiated (needed by the WGAN-GP gradient penalty).

Usage:
    w = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    loss = (w * w).sum()
    (grad_w,) = backward(loss, [w])      # [2, -4, 6]
"""

import contextlib
import itertools
import logging
import threading
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import ContractError, NumericError, ShapeError

logger = logging.getLogger(__name__)

# ============================================================
# CONSTANTS
# ============================================================

LEAKY_SLOPE = 0.2
DIV_GUARD = 1e-12

_ids = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording graph nodes (per thread)."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


# ============================================================
# TENSOR
# ============================================================

class Tensor:
    """A float64 array that may take part in a computation graph."""

    __slots__ = ("data", "requires_grad", "op", "parents", "_backward", "id", "name")
    __array_priority__ = 1000  # ndarray <op> Tensor dispatches to Tensor

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError(f"leaf {name or '<unnamed>'} holds non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.parents: tuple = ()
        self._backward = None
        self.id = next(_ids)
        self.name = name

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
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # Arithmetic
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, index): return getitem(self, index)

    # Reductions and elementwise helpers
    def sum(self, axis=None, keepdims: bool = False): return reduce_sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return reduce_mean(self, axis, keepdims)
    def relu(self): return relu(self)
    def leaky_relu(self, alpha: float = LEAKY_SLOPE): return leaky_relu(self, alpha)
    def tanh(self): return tanh(self)
    def sigmoid(self): return sigmoid(self)
    def square(self): return square(self)
    def sqrt(self): return sqrt(self)
    def abs(self): return absolute(self)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence]
BackwardFn = Callable[[Tensor, Tensor], tuple]


def as_tensor(value: TensorLike) -> Tensor:
    """Wrap arrays and scalars as constant tensors; pass tensors through."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, op: str, parents: tuple, backward: BackwardFn) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    out.id = next(_ids)
    out.name = None
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out.parents = parents if track else ()
    out._backward = backward if track else None
    return out


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ============================================================
# SHAPE OPS
# ============================================================

def reshape(x: TensorLike, shape) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(np.atleast_1d(shape))) from None
    return _make(data, "reshape", (x,), lambda g, out: (reshape(g, x.shape),))


def broadcast_to(x: TensorLike, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError("broadcast_to", x.shape, shape) from None
    return _make(data, "broadcast_to", (x,), lambda g, out: (sum_to(g, x.shape),))


def sum_to(x: Tensor, shape) -> Tensor:
    """Sum out broadcast dimensions so that x takes `shape` (inverse of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and x.shape[lead + i] != 1
    )
    out = reduce_sum(x, axis=axes, keepdims=True)
    return reshape(out, shape) if out.shape != shape else out


def transpose(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape, (), "expects a matrix")
    return _make(x.data.T.copy(), "transpose", (x,), lambda g, out: (transpose(g),))


def getitem(x: TensorLike, index) -> Tensor:
    """Row slicing / indexing. The gradient scatters back into the source shape."""
    x = as_tensor(x)
    data = np.array(x.data[index])
    return _make(data, "getitem", (x,), lambda g, out: (scatter(g, index, x.shape),))


def scatter(g: Tensor, index, shape) -> Tensor:
    data = np.zeros(shape)
    np.add.at(data, index, g.data)
    return _make(data, "scatter", (g,), lambda gg, out: (getitem(gg, index),))


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    first = tensors[0]
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, first.shape)) if i != axis
        ):
            raise ShapeError("concat", first.shape, t.shape, f"axis={axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g, out):
        grads = []
        for start, stop in zip(bounds[:-1], bounds[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(start), int(stop))
            grads.append(getitem(g, tuple(index)))
        return tuple(grads)

    return _make(data, "concat", tuple(tensors), backward)


# ============================================================
# ARITHMETIC
# ============================================================

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make(a.data + b.data, "add", (a, b),
                 lambda g, out: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g, out: (sum_to(g, a.shape), sum_to(neg(g), b.shape)))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g, out: (sum_to(g * b, a.shape), sum_to(g * a, b.shape)))


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(np.abs(b.data) < DIV_GUARD):
        raise NumericError(f"div: denominator magnitude below {DIV_GUARD:g}")
    return _make(a.data / b.data, "div", (a, b),
                 lambda g, out: (sum_to(g / b, a.shape),
                                 sum_to(neg(g) * a / (b * b), b.shape)))


def neg(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return _make(-x.data, "neg", (x,), lambda g, out: (neg(g),))


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _make(a.data @ b.data, "matmul", (a, b),
                 lambda g, out: (matmul(g, transpose(b)), matmul(transpose(a), g)))


# ============================================================
# ELEMENTWISE
# ============================================================

def relu(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    mask = (x.data > 0).astype(np.float64)  # subgradient 0 at the kink
    return _make(x.data * mask, "relu", (x,), lambda g, out: (g * mask,))


def leaky_relu(x: TensorLike, alpha: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    slope = np.where(x.data > 0, 1.0, alpha)  # alpha at the kink
    return _make(x.data * slope, "leaky_relu", (x,), lambda g, out: (g * slope,))


def tanh(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return _make(np.tanh(x.data), "tanh", (x,), lambda g, out: (g * (1.0 - out * out),))


def sigmoid(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return _make(expit(x.data), "sigmoid", (x,), lambda g, out: (g * out * (1.0 - out),))


def softplus(x: TensorLike) -> Tensor:
    """log(1 + e^x), evaluated stably. Used by the binary cross-entropy losses."""
    x = as_tensor(x)
    return _make(np.logaddexp(0.0, x.data), "softplus", (x,),
                 lambda g, out: (g * sigmoid(x),))


def square(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, "square", (x,), lambda g, out: (g * (x * 2.0),))


def sqrt(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise NumericError("sqrt of a negative value")
    return _make(np.sqrt(x.data), "sqrt", (x,), lambda g, out: (g / (out * 2.0),))


def absolute(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _make(np.abs(x.data), "abs", (x,), lambda g, out: (g * sign,))


# ============================================================
# REDUCTIONS
# ============================================================

def reduce_sum(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = np.sum(x.data, axis=axis, keepdims=keepdims)
    kept_shape = np.sum(x.data, axis=axis, keepdims=True).shape

    def backward(g, out):
        if g.shape != kept_shape:
            g = reshape(g, kept_shape)
        return (broadcast_to(g, x.shape),)

    return _make(data, "sum", (x,), backward)


def reduce_mean(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return reduce_sum(x, axis, keepdims) / float(count)


def norm(x: TensorLike, axis=None, keepdims: bool = False, eps: float = 0.0) -> Tensor:
    """L2 norm along `axis`. `eps` is added under the root when zero norms are possible."""
    total = reduce_sum(square(x), axis, keepdims)
    return sqrt(total + eps) if eps else sqrt(total)


# ============================================================
# GRAPH EVALUATION
# ============================================================

def forward(root: Tensor) -> np.ndarray:
    """Value at `root`. Ops evaluate eagerly, so this only reads the cached value."""
    if not np.isfinite(root.data).all():
        raise NumericError(f"{root.op} holds non-finite values")
    return root.data.copy()


def _reverse_order(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen.add(node.id)
        nodes.append(node)
        stack.extend(p for p in node.parents if p.requires_grad)
    nodes.sort(key=lambda n: n.id, reverse=True)
    return nodes


def backward(root: Tensor, leaves: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """
    Gradients of a scalar `root` with respect to each tensor in `leaves`.

    Args:
        root: scalar tensor (any shape with exactly one element)
        leaves: tensors to differentiate against; unreachable ones get zeros
        create_graph: record the backward pass so the returned gradients are
            differentiable themselves

    Returns:
        One gradient tensor per leaf, shaped like the leaf.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")

    grads: dict[int, Tensor] = {}
    context = contextlib.nullcontext() if create_graph else no_grad()
    with context:
        grads[root.id] = Tensor(np.ones_like(root.data))
        for node in _reverse_order(root):
            g = grads.get(node.id)
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node.parents, node._backward(g, node)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.id)
                grads[parent.id] = pg if prev is None else prev + pg

    results = []
    for leaf in leaves:
        g = grads.get(leaf.id)
        if g is None:
            results.append(Tensor(np.zeros_like(leaf.data)))
        else:
            results.append(g if create_graph else Tensor(g.data))
    return results


def finite_diff_check(build: Callable[[Tensor], Tensor], leaf_value, step: float = 1e-5) -> float:
    """
    Compare analytic and central-difference gradients of a scalar graph.

    `build` maps a leaf tensor to the scalar root; it is re-run for every
    perturbed entry (define-by-run graphs are rebuilt, not re-bound).

    Returns:
        max over leaf entries of |analytic - numeric| / max(1, |analytic|)
    """
    base = np.array(leaf_value, dtype=np.float64)
    leaf = Tensor(base, requires_grad=True)
    (analytic,) = backward(build(leaf), [leaf])
    analytic = analytic.data

    numeric = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus = base.copy()
        plus[idx] += step
        minus = base.copy()
        minus[idx] -= step
        numeric[idx] = (build(Tensor(plus)).item() - build(Tensor(minus)).item()) / (2.0 * step)

    error = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(error.max()) if error.size else 0.0
