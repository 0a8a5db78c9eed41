"""Minimal reverse-mode differentiation over numpy arrays.

Every differentiable op builds an output ``Tensor`` that remembers its
parents and a closure mapping the output adjoint to parent adjoints.
``Tensor.backward`` replays those closures in reverse topological order.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when op inputs do not conform to the op's shape contract."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + ", ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GradientCheckError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and data.dtype.kind == "f" and dtype is None:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype or DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    # -- metadata -------------------------------------------------------
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
    def values(self):
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError("item", self.shape, detail="tensor is not a scalar")

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- graph traversal ------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf.

        Without ``grad`` the tensor must hold a single element.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward", self.shape, detail="implicit seed needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)

        order = _topological_order(self)
        if not order:
            return
        adjoints = {id(self): grad}
        for node in reversed(order):
            g = adjoints.pop(id(node), None)
            if node._backward is None:
                if node.requires_grad:
                    if g is None:
                        g = np.zeros_like(node.data)
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = adjoints.get(key)
                adjoints[key] = pg if prev is None else prev + pg

    # -- operator sugar -------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _topological_order(root):
    if not root.requires_grad:
        return []
    order, seen = [], set()
    stack = [(root, False)]
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


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise binary ---------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward, "div")


def scale(a, c):
    """Multiply by a python scalar."""
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


# -- elementwise unary ----------------------------------------------------
def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def square(a):
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def softplus(a):
    """log(1 + exp(a)) in the overflow-free form max(a,0) + log1p(exp(-|a|))."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _stable_sigmoid(x),), "softplus")


def clamp(a, lo, hi):
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clamp")


def prelu(x, slope):
    """Parametric rectifier with a single learnable slope (shape (1,))."""
    x, slope = as_tensor(x), as_tensor(slope)
    if slope.size != 1:
        raise ShapeError("prelu", x.shape, slope.shape, detail="slope must hold one value")
    a = slope.data.reshape(-1)[0]
    pos = x.data > 0
    out = np.where(pos, x.data, a * x.data)

    def backward(g):
        gx = g * np.where(pos, 1.0, a)
        gs = np.array([np.sum(g * np.where(pos, 0.0, x.data))]).reshape(slope.shape)
        return gx, gs

    return _make(out, (x, slope), backward, "prelu")


# -- linear algebra -------------------------------------------------------
def matmul(a, b):
    """np.matmul semantics for ndim >= 2 (batched when ndim > 2)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


def transpose(a):
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose", a.shape, detail="need at least 2 dims")
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, key):
    """Basic (slice/int) indexing."""
    a = as_tensor(a)
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _make(np.array(out, copy=True), (a,), backward, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", detail="no inputs")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax
        ):
            raise ShapeError("concat", tensors[0].shape, t.shape, detail=f"axis={axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


# -- reductions -----------------------------------------------------------
def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out, dtype=a.data.dtype), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    if n == 0:
        raise ShapeError("mean", a.shape, detail=f"empty reduction over axis={axis}")
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def softmax(a, axis=-1):
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise ShapeError("softmax", a.shape, detail=f"empty axis {axis}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, "softmax")


# -- indexing -------------------------------------------------------------
def gather(a, index):
    """Rows ``a[index]`` along axis 0."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError("gather", a.shape, index.shape, detail="index out of range")

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward, "gather")


def scatter_sum(a, index, size):
    """out[k] = sum of a[i] over i with index[i] == k, for k < size."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.shape != (a.shape[0],):
        raise ShapeError("scatter_sum", a.shape, index.shape, detail="one index per row")
    if index.size and (index.min() < 0 or index.max() >= size):
        raise ShapeError("scatter_sum", a.shape, index.shape, detail=f"index outside [0, {size})")
    out = np.zeros((size,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(out, index, a.data)
    return _make(out, (a,), lambda g: (g[index],), "scatter_sum")


def segment_softmax(scores, segment, num_segments):
    """Softmax of a 1-D score vector within each segment id."""
    scores = as_tensor(scores)
    segment = np.asarray(segment, dtype=np.int64)
    counts = np.bincount(segment, minlength=num_segments)
    if np.any(counts == 0):
        raise ShapeError("segment_softmax", scores.shape, detail="empty segment")
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, segment, scores.data)
    shifted = sub(scores, Tensor(seg_max[segment]))
    e = exp(shifted)
    denom = scatter_sum(e, segment, num_segments)
    return div(e, gather(denom, segment))


# -- normalization --------------------------------------------------------
@dataclass
class BatchNormState:
    """Running statistics, updated in place in training mode."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    num_batches: int = field(default=0)

    @classmethod
    def create(cls, dim, momentum=0.1, eps=1e-5):
        return cls(np.zeros(dim, dtype=DTYPE), np.ones(dim, dtype=DTYPE), momentum, eps)


def batch_norm(x, gamma, beta, state, training):
    """Per-feature normalization of a (rows, features) matrix.

    Training mode normalizes with batch statistics and folds them into the
    running averages; evaluation mode uses the running averages only.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batch_norm", x.shape, gamma.shape, beta.shape)
    eps = state.eps
    if not training:
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xn = (x.data - state.running_mean) * inv
        out = xn * gamma.data + beta.data

        def backward_eval(g):
            return g * gamma.data * inv, (g * xn).sum(0), g.sum(0)

        return _make(out, (x, gamma, beta), backward_eval, "batch_norm")

    n = x.shape[0]
    if n == 0:
        raise ShapeError("batch_norm", x.shape, detail="empty batch")
    mu = x.data.mean(0)
    var = x.data.var(0)
    inv = 1.0 / np.sqrt(var + eps)
    xn = (x.data - mu) * inv
    out = xn * gamma.data + beta.data
    m = state.momentum
    unbiased = var * n / (n - 1) if n > 1 else var
    state.running_mean[:] = (1 - m) * state.running_mean + m * mu
    state.running_var[:] = (1 - m) * state.running_var + m * unbiased
    state.num_batches += 1

    def backward(g):
        gxn = g * gamma.data
        gx = inv * (gxn - gxn.mean(0) - xn * (gxn * xn).mean(0))
        return gx, (g * xn).sum(0), g.sum(0)

    return _make(out, (x, gamma, beta), backward, "batch_norm")


# -- gradient checking ----------------------------------------------------
@dataclass
class GradCheckReport:
    max_rel_error: float
    rel_errors: list  # one array per input, same shape as the input
    failures: list  # (input index, flat element index, analytic, numeric, rel error)
    tolerance: float

    @property
    def passed(self):
        return not self.failures


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8
    )


def check_gradients(fn, inputs, step=1e-5, tolerance=1e-4):
    """Compare analytic gradients of scalar ``fn(*inputs)`` with central differences.

    ``inputs`` are perturbed in place and restored afterwards.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = fn(*inputs)
    if out.size != 1:
        raise ShapeError("check_gradients", out.shape, detail="function must return a scalar")
    if not np.isfinite(out.data).all():
        raise GradientCheckError("non-finite function value at the unperturbed point")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rel_errors, failures = [], []
    worst = 0.0
    with no_grad():
        for ti, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            numeric = np.zeros(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = fn(*inputs).item()
                flat[i] = orig - step
                fm = fn(*inputs).item()
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise GradientCheckError(f"non-finite value perturbing input {ti} element {i}")
                numeric[i] = (fp - fm) / (2.0 * step)
            a = analytic[ti].reshape(-1)
            if not np.isfinite(a).all():
                bad = int(np.flatnonzero(~np.isfinite(a))[0])
                raise GradientCheckError(f"non-finite analytic gradient at input {ti} element {bad}")
            err = relative_error(a, numeric)
            rel_errors.append(err.reshape(t.shape))
            for i in np.flatnonzero(err > tolerance):
                failures.append((ti, int(i), float(a[i]), float(numeric[i]), float(err[i])))
            if err.size:
                worst = max(worst, float(err.max()))
    return GradCheckReport(worst, rel_errors, failures, tolerance)
