"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery to train the artist-embedding networks: 2-D matmul,
elementwise activations, segment (per-neighborhood) softmax, batch
normalization, and Euclidean distances, each with a registered gradient.
The op log is captured on the tensors themselves: every tensor remembers
its parents and a creation sequence number, so walking the reachable set
in reverse creation order replays the recorded ops backward exactly once.

Every op validates that its output is finite and raises ``NonFiniteError``
otherwise; NaN/Inf never propagates silently.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "as_tensor",
    "no_grad",
    "set_default_dtype",
    "get_default_dtype",
    "concat",
    "gather_rows",
    "take_per_row",
    "segment_sum",
    "segment_softmax",
    "relu",
    "elu",
    "leaky_relu",
    "log_softmax",
    "euclidean_distance",
    "batch_norm",
    "gradients",
    "zero_grads",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op's contract."""


class NonFiniteError(FloatingPointError):
    """Raised when an op would produce NaN or Inf from finite inputs."""


_DTYPE = np.float64
_GRAD_ENABLED = True
_SEQ = itertools.count()


def set_default_dtype(dtype) -> None:
    """Set the dtype for newly created tensors ('float64' default, 'float32' for speed)."""
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DTYPE = dt.type


def get_default_dtype():
    return _DTYPE


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_seq", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._grad_fn: Optional[Callable] = None
        self._seq = next(_SEQ)
        self._op = "leaf"

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable tensor's ``.grad``."""
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        nodes = _reachable(self)
        self.grad = np.ones_like(self.data)
        # Reverse creation order is a valid reverse-topological order:
        # parents always precede children.
        for node in sorted(nodes, key=lambda t: t._seq, reverse=True):
            if node._grad_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._grad_fn(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return _broadcast_op("add", self, as_tensor(other), np.add,
                             lambda a, b, out, g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return _broadcast_op("sub", self, as_tensor(other), np.subtract,
                             lambda a, b, out, g: (g, -g))

    def __rsub__(self, other):
        return as_tensor(other).__sub__(self)

    def __mul__(self, other):
        return _broadcast_op("mul", self, as_tensor(other), np.multiply,
                             lambda a, b, out, g: (g * b.data, g * a.data))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _broadcast_op("div", self, as_tensor(other), np.divide,
                             lambda a, b, out, g: (g / b.data, -g * out / b.data))

    def __neg__(self):
        return _make("neg", -self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        return _make("sum", out, (self,), vjp)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return _make("reshape", self.data.reshape(shape), (self,),
                     lambda g: (g.reshape(old),))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return _make("sqrt", out, (self,), lambda g: (g * 0.5 / out,))


def as_tensor(x) -> Tensor:
    """Wrap a number or array as a constant tensor; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _reachable(root: Tensor) -> list:
    seen = set()
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        out.append(node)
        stack.extend(node._parents)
    return out


def _make(op: str, data: np.ndarray, parents: tuple, grad_fn) -> Tensor:
    data = np.asarray(data)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"op {op!r} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._seq = next(_SEQ)
    out._op = op
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_op(op, a: Tensor, b: Tensor, fwd, vjp) -> Tensor:
    # Non-finite results raise NonFiniteError in _make; numpy's own warning
    # for the same event is redundant noise.
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out_data = fwd(a.data, b.data)

    def grad_fn(g):
        ga, gb = vjp(a, b, out_data, g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(op, out_data, (a, b), grad_fn)


# -- linear algebra ----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    with np.errstate(over="ignore"):
        out = a.data @ b.data
    return _make("matmul", out, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), vjp)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows ``x[idx]``; the gradient scatter-adds back (duplicates accumulate)."""
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make("gather_rows", x.data[idx], (x,), vjp)


def take_per_row(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one column per row: out[i] = x[i, idx[i]]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _make("take_per_row", x.data[rows, idx], (x,), vjp)


# -- segment ops -------------------------------------------------------


def _check_segments(indptr: np.ndarray, total: int, op: str, allow_empty: bool = False):
    indptr = np.asarray(indptr, dtype=np.int64)
    if indptr[0] != 0 or indptr[-1] != total or np.any(np.diff(indptr) < 0):
        raise ShapeError(f"{op}: segment offsets must partition 0..{total}, got {indptr!r}")
    if not allow_empty and np.any(np.diff(indptr) == 0):
        empty = np.where(np.diff(indptr) == 0)[0]
        raise ShapeError(f"{op}: empty segment(s) at {empty.tolist()}")
    return indptr


def _segment_ids(indptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))


def segment_sum(values: Tensor, indptr: np.ndarray, allow_empty: bool = True) -> Tensor:
    """Sum rows of ``values`` within each contiguous segment."""
    indptr = _check_segments(indptr, values.shape[0], "segment_sum", allow_empty)
    seg = _segment_ids(indptr)
    out_shape = (len(indptr) - 1,) + values.shape[1:]
    out = np.zeros(out_shape, dtype=values.data.dtype)
    np.add.at(out, seg, values.data)

    def vjp(g):
        return (g[seg],)

    return _make("segment_sum", out, (values,), vjp)


def segment_softmax(scores: Tensor, indptr: np.ndarray) -> Tensor:
    """Softmax of a flat score vector, normalized independently per segment.

    Max-subtraction is applied per segment for numerical stability. Empty
    segments are an error: a node with no neighbors must not reach this op.
    """
    if scores.ndim != 1:
        raise ShapeError(f"segment_softmax expects a 1-D score vector, got {scores.shape}")
    indptr = _check_segments(indptr, scores.shape[0], "segment_softmax")
    seg = _segment_ids(indptr)
    seg_max = np.maximum.reduceat(scores.data, indptr[:-1])
    shifted = scores.data - seg_max[seg]
    exp = np.exp(shifted)
    denom = np.add.reduceat(exp, indptr[:-1])
    alpha = exp / denom[seg]

    def vjp(g):
        weighted = alpha * g
        seg_dot = np.add.reduceat(weighted, indptr[:-1])
        return (weighted - alpha * seg_dot[seg],)

    return _make("segment_softmax", alpha, (scores,), vjp)


# -- activations -------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0.0), (x,),
                 lambda g: (np.where(mask, g, 0.0),))


def elu(x: Tensor) -> Tensor:
    """Exponential linear unit: x for x > 0, exp(x) - 1 otherwise."""
    mask = x.data > 0
    # expm1 only ever sees the non-positive branch, so it cannot overflow
    out = np.where(mask, x.data, np.expm1(np.where(mask, 0.0, x.data)))
    return _make("elu", out, (x,),
                 lambda g: (np.where(mask, g, g * (out + 1.0)),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
    mask = x.data > 0
    return _make("leaky_relu", np.where(mask, x.data, slope * x.data), (x,),
                 lambda g: (np.where(mask, g, slope * g),))


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of a 2-D score matrix."""
    if x.ndim != 2:
        raise ShapeError(f"log_softmax expects a 2-D matrix, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return _make("log_softmax", out, (x,), vjp)


# -- distances ---------------------------------------------------------


def euclidean_distance(a: Tensor, b: Tensor) -> Tensor:
    """L2 distance between two vectors, or row-wise between two matrices.

    The subgradient at coincident points is 0, so coincident embeddings
    never produce NaN through the 0/0 in the L2 derivative.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"euclidean_distance length mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    dist = np.sqrt((diff * diff).sum(axis=-1))

    def vjp(g):
        safe = np.where(dist == 0.0, 1.0, dist)
        scale = np.where(dist == 0.0, 0.0, np.asarray(g) / safe)
        ga = diff * (scale[..., None] if diff.ndim > 1 else scale)
        return (ga, -ga)

    return _make("euclidean_distance", dist, (a, b), vjp)


# -- batch normalization ----------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over the leading (batch) axis with learned affine.

    Train mode normalizes by batch statistics and folds them into the running
    statistics in place (momentum-weighted, torch convention: unbiased variance
    for the running estimate, biased for normalization). Eval mode normalizes
    by the running statistics. Composed from primitive ops, so gradients for
    x, gamma, and beta come from the tape.
    """
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects a 2-D batch, got {x.shape}")
    if training:
        b = x.shape[0]
        if b < 2:
            raise ShapeError("batch_norm train mode needs a batch of at least 2 rows")
        mu = x.mean(axis=0)
        centered = x - mu
        var = (centered * centered).mean(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data
        running_var *= 1.0 - momentum
        running_var += momentum * var.data * (b / (b - 1))
        xhat = centered / (var + eps).sqrt()
    else:
        xhat = (x - as_tensor(running_mean)) / as_tensor(np.sqrt(running_var + eps))
    return xhat * gamma + beta


# -- gradient collection ----------------------------------------------


def gradients(loss: Tensor, params: Iterable[Tensor]) -> list:
    """Backward from ``loss`` and return one gradient array per parameter.

    Parameters the loss never touched get zero gradients, and existing
    ``.grad`` buffers are reset first so each call yields exactly one
    gradient per parameter.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
