"""
Dense tensors with reverse-mode gradients.

A :class:`Tensor` wraps a float64 :mod:`numpy` array. Every operation in this
module records its inputs and a backward closure on the result, building a
tape ordered by creation. :func:`backward` walks that tape in reverse
execution order, visiting each reachable node exactly once, and releases it.

Usage
-----
::

    from yoro._tensor import Tensor, matmul, backward

    w = Tensor(np.random.randn(3, 4), requires_grad=True)
    x = Tensor(np.random.randn(4, 2))
    loss = matmul(w, x).sum()
    backward(loss)
    w.grad  # d loss / d w
"""

import contextlib
import itertools
import math
import threading
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from yoro._errors import ContractError, DimensionError, NumericError, StateError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_sequence = itertools.count()
_grad_state = threading.local()

_GELU_C = math.sqrt(2.0 / math.pi)


def is_grad_enabled() -> bool:
    """Whether operations currently record the graph (per thread)."""
    return getattr(_grad_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the ``with`` block."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """
    A float64 array that can take part in gradient computation.

    Parameters
    ----------
    data : array_like
        Values; copied into a contiguous float64 array.
    requires_grad : bool
        If True, :func:`backward` fills ``grad`` for this tensor.
    name : str, optional
        Label used in error messages and checkpoints.
    """

    __slots__ = ("data", "requires_grad", "grad", "name",
                 "_parents", "_backward", "_seq", "_released")

    # ndarray on the left of an operator defers to the Tensor reflected method
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._seq = next(_sequence)
        self._released = False

    # -----------------------------------------------------------------
    # Introspection
    # -----------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        """Return a copy of the values, detached from the graph."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() needs a single-element tensor", shape=self.shape)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{req}{nm})"

    # -----------------------------------------------------------------
    # Operator sugar
    # -----------------------------------------------------------------

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Wrap *value* as a constant tensor unless it already is one."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum *grad* down to *shape* after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast",
                             left=a.shape, right=b.shape) from None


# ---------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _record(a.data + b.data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _record(a.data - b.data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _record(a.data * b.data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward_fn(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _record(out, (a, b), backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def backward_fn(g):
        return (g * factor,)
    return _record(a.data * factor, (a,), backward_fn)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward_fn(g):
        return (g * out,)
    return _record(out, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NumericError("log of a non-positive value", minimum=float(a.data.min()))

    def backward_fn(g):
        return (g / a.data,)
    return _record(np.log(a.data), (a,), backward_fn)


def tabs(a: Tensor) -> Tensor:
    def backward_fn(g):
        return (g * np.sign(a.data),)
    return _record(np.abs(a.data), (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward_fn(g):
        return (g * out * (1.0 - out),)
    return _record(out, (a,), backward_fn)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    out = 0.5 * x * (1.0 + t)

    def backward_fn(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)
    return _record(out, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward_fn(g):
        return (g * mask,)
    return _record(np.where(mask, a.data, 0.0), (a,), backward_fn)


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to *a*."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "maximum")
    pick_a = a.data >= b.data

    def backward_fn(g):
        return (_unbroadcast(g * pick_a, a.shape),
                _unbroadcast(g * ~pick_a, b.shape))
    return _record(np.where(pick_a, a.data, b.data), (a, b), backward_fn)


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to *a*."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "minimum")
    pick_a = a.data <= b.data

    def backward_fn(g):
        return (_unbroadcast(g * pick_a, a.shape),
                _unbroadcast(g * ~pick_a, b.shape))
    return _record(np.where(pick_a, a.data, b.data), (a, b), backward_fn)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when ``p == 0``."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward_fn(g):
        return (g * keep,)
    return _record(a.data * keep, (a,), backward_fn)


# ---------------------------------------------------------------------
# Linear algebra and shape
# ---------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batching over leading ones."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}",
                             left=a.shape, right=b.shape)

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _record(np.matmul(a.data, b.data), (a, b), backward_fn)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2) if a.ndim >= 2 else (0,)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        return (np.transpose(g, inverse),)
    return _record(np.transpose(a.data, axes), (a,), backward_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}",
                             shape=a.shape, target=tuple(shape)) from None

    def backward_fn(g):
        return (g.reshape(a.shape),)
    return _record(out, (a,), backward_fn)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _record(out, (a,), backward_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape}",
                                 left=ref, right=t.shape)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))
    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward_fn)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=0)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= a.shape[0]:
        raise DimensionError(f"slice_rows: [{start}:{stop}] outside {a.shape[0]} rows",
                             start=start, stop=stop, rows=a.shape[0])

    def backward_fn(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)
    return _record(a.data[start:stop], (a,), backward_fn)


def take(a: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Gather entries along *axis*; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise DimensionError(f"take: index out of range for axis of size {a.shape[axis]}",
                             axis=axis, extent=a.shape[axis])

    def backward_fn(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)
    return _record(np.take(a.data, idx, axis=axis), (a,), backward_fn)


# ---------------------------------------------------------------------
# Normalisations
# ---------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax of non-finite input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _record(out, (a,), backward_fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(a.data)):
        raise NumericError("log_softmax of non-finite input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward_fn(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)
    return _record(out, (a,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias must have shape ({d},)",
                             gain=gain.shape, bias=bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward_fn(g):
        dxhat = g * gain.data
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)
    return _record(out, (x, gain, bias), backward_fn)


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((a.data ** 2).sum(axis=axis, keepdims=True) + eps)
    out = a.data / norm

    def backward_fn(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)
    return _record(out, (a,), backward_fn)


# ---------------------------------------------------------------------
# Graph traversal
# ---------------------------------------------------------------------

class Graph:
    """
    The recorded operations reachable from one output, in execution order.

    ``nodes`` is sorted by creation sequence, which is a topological order
    because every tensor is created after its inputs.
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def collect(cls, root: Tensor) -> "Graph":
        seen = {id(root): root}
        stack = [root]
        while stack:
            node = stack.pop()
            for parent in node._parents:
                if id(parent) not in seen:
                    seen[id(parent)] = parent
                    stack.append(parent)
        return cls(sorted(seen.values(), key=lambda t: t._seq))

    def __len__(self) -> int:
        return len(self.nodes)

    def release(self) -> None:
        """Drop closures and parent links so intermediate buffers can be freed."""
        for node in self.nodes:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._released = True


def backward(loss: Tensor) -> int:
    """
    Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor
    with ``requires_grad``.

    Returns the number of recorded operations visited. The graph is
    released afterwards; gradients of leaves keep accumulating across calls
    until :meth:`Tensor.zero_grad`.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError("backward needs a scalar loss", shape=loss.shape)
    if loss._released:
        raise StateError("graph of this tensor was already released by backward")
    if not loss.requires_grad:
        return 0

    graph = Graph.collect(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    visits = 0
    for node in reversed(graph.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        visits += 1
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
    graph.release()
    return visits


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    """Global L2 norm of the gradients of *params* (missing grads count as 0)."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad ** 2).sum())
    return math.sqrt(total)
