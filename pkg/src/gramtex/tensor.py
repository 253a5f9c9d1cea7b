"""Dense tensors with reverse-mode automatic differentiation.

The computation graph is dynamic (define-by-run): every operation appends a
node holding its parents and a backward closure, and nodes carry a creation
index so the tape is topologically ordered by construction.  ``backward`` on
a scalar walks the reachable nodes exactly once in reverse creation order,
accumulating per-pass adjoints and adding them into each node's ``grad`` slot,
so repeated calls without ``zero_grad`` accumulate.

Scalars default to float32; pass float64 data (or set the module default) for
gradient-check headroom.  Results follow numpy's dtype promotion.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import NumericError, ShapeError

_SEQ = itertools.count()
_DEFAULT_DTYPE = np.dtype(np.float32)
_FINITE_CHECKS = False
_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (inference mode).

    Ops still compute forward values but record no parents or backward
    closures, so nothing inside the block is differentiable.
    """

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def set_default_dtype(dtype):
    """Set the dtype used when wrapping non-float data. Returns the old one."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"default dtype must be float32 or float64, got {dt}")
    old, _DEFAULT_DTYPE = _DEFAULT_DTYPE, dt
    return old


def default_dtype():
    return _DEFAULT_DTYPE


def set_finite_checks(enabled):
    """Toggle per-op NaN/Inf scanning (debug aid, off by default)."""
    global _FINITE_CHECKS
    old, _FINITE_CHECKS = _FINITE_CHECKS, bool(enabled)
    return old


def _as_array(data, dtype=None):
    # Keep float32/float64 inputs as-is (covers 0-d numpy scalars from reductions).
    if dtype is None and isinstance(data, (np.ndarray, np.generic)) and data.dtype in (
        np.dtype(np.float32),
        np.dtype(np.float64),
    ):
        return np.asarray(data)
    return np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)


class Tensor:
    """N-d float array with an optional gradient slot.

    ``data`` is the forward value, ``grad`` (same shape, or None) accumulates
    d(loss)/d(self) across ``backward`` calls.  Tensors produced by ops are
    treated as immutable.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = next(_SEQ)
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {tuple(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Same data, cut off from the graph."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _lift(other, self.dtype)
        _conformable(self.shape, other.shape, "add")
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return from_op(a.data + b.data, (a, b), backward, "add")

    def __sub__(self, other):
        other = _lift(other, self.dtype)
        _conformable(self.shape, other.shape, "sub")
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape) * -1.0

        return from_op(a.data - b.data, (a, b), backward, "sub")

    def __mul__(self, other):
        other = _lift(other, self.dtype)
        _conformable(self.shape, other.shape, "mul")
        a, b = self, other

        def backward(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return from_op(a.data * b.data, (a, b), backward, "mul")

    def __truediv__(self, other):
        other = _lift(other, self.dtype)
        _conformable(self.shape, other.shape, "div")
        a, b = self, other

        def backward(g):
            ga = _unbroadcast(g / b.data, a.shape)
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
            return ga, gb

        return from_op(a.data / b.data, (a, b), backward, "div")

    def __radd__(self, other):
        return self + other

    def __rsub__(self, other):
        return _lift(other, self.dtype) - self

    def __rmul__(self, other):
        return self * other

    def __rtruediv__(self, other):
        return _lift(other, self.dtype) / self

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, k):
        """Multiply by a python scalar."""
        k = float(k)
        return from_op(self.data * k, (self,), lambda g: (g * k,), "scale")

    def __pow__(self, k):
        if not isinstance(k, (int, float)):
            raise TypeError("exponent must be a python scalar")
        k = float(k)
        a = self

        def backward(g):
            return (g * k * a.data ** (k - 1.0),)

        return from_op(a.data**k, (a,), backward, "pow")

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        axes = _norm_axes(axis, a.ndim)

        def backward(g):
            if axes is not None and not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, a.shape),)

        return from_op(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")

    def mean(self, axis=None, keepdims=False):
        a = self
        axes = _norm_axes(axis, a.ndim)
        n = a.size if axes is None else int(np.prod([a.shape[i] for i in axes]))

        def backward(g):
            if axes is not None and not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, a.shape) / n,)

        return from_op(a.data.mean(axis=axes, keepdims=keepdims), (a,), backward, "mean")

    # -- linear algebra / structure ------------------------------------------

    def __matmul__(self, other):
        other = _lift(other, self.dtype)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: shapes {tuple(a.shape)} and {tuple(b.shape)} are not conformable")

        def backward(g):
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            return ga, gb

        return from_op(np.matmul(a.data, b.data), (a, b), backward, "matmul")

    def matmul(self, other):
        return self @ other

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        try:
            data = a.data.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot view {tuple(a.shape)} as {shape}") from None
        return from_op(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")

    def transpose(self, *axes):
        a = self
        if not axes:
            axes = tuple(reversed(range(a.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")

    def __getitem__(self, idx):
        # Basic (slice/integer) indexing only; windows never overlap, so the
        # backward scatter is a plain assignment.
        a = self

        def backward(g):
            out = np.zeros_like(a.data)
            out[idx] = g
            return (out,)

        return from_op(a.data[idx], (a,), backward, "slice")

    def broadcast_to(self, shape):
        a = self
        _conformable(a.shape, tuple(shape), "broadcast")
        return from_op(
            np.broadcast_to(a.data, shape), (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast"
        )

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        """Backpropagate from this scalar, accumulating into ``grad`` slots."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {tuple(self.shape)}")
        if not self.requires_grad:
            return
        seen = {self}
        stack = [self]
        while stack:
            for p in stack.pop()._parents:
                if p.requires_grad and p not in seen:
                    seen.add(p)
                    stack.append(p)
        adjoint = {self: np.ones_like(self.data)}
        for node in sorted(seen, key=lambda t: t._seq, reverse=True):
            g = adjoint.pop(node, None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                cur = adjoint.get(parent)
                adjoint[parent] = pg if cur is None else cur + pg


def from_op(data, parents, backward, op="op"):
    """Wrap an op result as a graph node.

    ``backward(grad)`` must return one gradient array (or None) per parent.
    The node only keeps the graph alive if some parent requires grad.
    """
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op {op!r}")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def concat(tensors, axis):
    """Concatenate tensors along ``axis``; backward splits the gradient."""
    tensors = list(tensors)
    if len(tensors) < 2:
        raise ShapeError("concat needs at least two tensors")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [tuple(t.shape) for t in tensors]
        raise ShapeError(f"concat: shapes {shapes} do not align off axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return from_op(data, tuple(tensors), backward, "concat")


def zero_grad(params):
    """Reset the grad slot of every tensor in ``params`` to zeros."""
    for p in params:
        p.grad = np.zeros_like(p.data)


def _lift(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _conformable(a, b, op):
    try:
        np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: shapes {tuple(a)} and {tuple(b)} are not conformable") from None


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _norm_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)
