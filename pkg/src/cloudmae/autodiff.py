"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a row-major numpy float64 array. Every operation records
its inputs and a vector-Jacobian closure on the output tensor whenever any
input requires gradients, building an implicit tape. ``backward`` replays the
tape in reverse topological order and accumulates gradients into leaf tensors.

All results are checked for NaN/Inf at creation; a non-finite value raises
``NumericsError`` instead of propagating.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes are invalid for the requested op."""


class NumericsError(ArithmeticError):
    """An op produced NaN or Inf."""


class GraphError(RuntimeError):
    """Backward called on an invalid or already-consumed graph."""


def _check_finite(data, op):
    if not np.isfinite(data).all():
        raise NumericsError(f"{op}: produced non-finite values")


class Tensor:
    """Float64 array with optional gradient tracking.

    ``data`` is always a C-contiguous float64 ndarray. ``grad`` is filled by
    ``backward`` for leaf tensors with ``requires_grad`` and accumulates
    across successive backward calls until ``grad`` is cleared.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op", "_done")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # keeps 0-d shape, unlike unconditional copy
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self._op = "leaf"
        self._done = False

    @classmethod
    def _wrap(cls, arr):
        # internal fast path: arr is a float64 ndarray already validated by the op
        t = object.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._vjp = None
        t._op = "leaf"
        t._done = False
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays are wrapped as constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        other = _as_tensor(other)
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(_as_tensor(other), power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _result(op, data, parents, vjp, check=True):
    # check=False is reserved for pure data-movement ops, which cannot
    # introduce non-finite values into already-validated inputs
    if check:
        _check_finite(data, op)
    out = Tensor._wrap(np.asarray(data, dtype=np.float64))
    for p in parents:
        if p.requires_grad:
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
            out._op = op
            break
    return out


# ---------------------------------------------------------------------------
# elementwise and arithmetic ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _result("add", data, (a, b), lambda g: (
        _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    a = _as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,), check=False)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return _result("mul", data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def power(a, exponent):
    """Elementwise a**c for a real scalar exponent."""
    a = _as_tensor(a)
    c = float(exponent)
    data = a.data ** c
    return _result("power", data, (a,), lambda g: (g * c * a.data ** (c - 1.0),))


def exp(a):
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)  # overflow surfaces via the finite check
    return _result("exp", data, (a,), lambda g: (g * data,))


def log(a):
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _result("log", data, (a,), lambda g: (g / a.data,))


def gelu(a):
    """Gaussian error linear unit, exact erf form."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * cdf

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _result("gelu", data, (a,), vjp)


def minimum(a, b):
    """Elementwise min; at ties the gradient routes to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        take_a = a.data <= b.data
    except ValueError:
        raise ShapeError(f"minimum: shapes {a.shape} and {b.shape} do not broadcast")
    data = np.where(take_a, a.data, b.data)
    return _result("minimum", data, (a, b), lambda g: (
        _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)),
        check=False)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape):
    a = _as_tensor(a)
    if isinstance(shape, int):
        shape = (shape,)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}")
    old = a.shape
    return _result("reshape", data, (a,), lambda g: (g.reshape(old),), check=False)


def transpose(a, axes=None):
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _result("transpose", a.data.transpose(axes), (a,),
                   lambda g: (g.transpose(inverse),), check=False)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[t.shape for t in tensors]} mismatch on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result("concat", data, tensors, vjp, check=False)


def gather(a, indices, axis=0):
    """Select rows along ``axis`` by integer index; duplicates accumulate in backward."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < -a.shape[axis] or idx.max() >= a.shape[axis]):
        raise ShapeError(f"gather: index out of range for axis {axis} of {a.shape}")
    data = np.take(a.data, idx, axis=axis)

    def vjp(g):
        ga = np.zeros_like(a.data)
        moved = np.moveaxis(ga, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (ga,)

    return _result("gather", data, (a,), vjp, check=False)


def broadcast_to(a, shape):
    a = _as_tensor(a)
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}")
    return _result("broadcast_to", data, (a,), lambda g: (_unbroadcast(g, a.shape),), check=False)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product with numpy batching semantics; operands must be >= 2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _result("matmul", data, (a, b), vjp)


def linear(x, weight, bias):
    """x @ weight + bias; weight is (in, out), bias is (out,)."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if weight.ndim != 2 or bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"linear: weight {weight.shape} and bias {bias.shape} are inconsistent")
    return add(matmul(x, weight), bias)


def sqdist(a, b):
    """Pairwise squared Euclidean distances.

    ``a`` is (..., p, d) and ``b`` is (..., q, d); the result is (..., p, q)
    with entry [i, j] = ||a_i - b_j||^2, computed from explicit differences so
    values are exactly non-negative.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"sqdist: shapes {a.shape} and {b.shape} are incompatible")
    diff = a.data[..., :, None, :] - b.data[..., None, :, :]
    data = np.sum(diff * diff, axis=-1)

    def vjp(g):
        weighted = 2.0 * g[..., None] * diff
        ga = _unbroadcast(weighted.sum(axis=-2), a.shape)
        gb = _unbroadcast(-weighted.sum(axis=-3), b.shape)
        return (ga, gb)

    return _result("sqdist", data, (a, b), vjp)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def reduce_sum(a, axis=None):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis)
    shape = a.shape
    return _result("reduce_sum", data, (a,),
                   lambda g: (_expand_reduced(g, shape, axis),))


def reduce_mean(a, axis=None):
    a = _as_tensor(a)
    data = a.data.mean(axis=axis)
    shape = a.shape
    count = a.size if axis is None else shape[axis]
    return _result("reduce_mean", data, (a,),
                   lambda g: (_expand_reduced(g / count, shape, axis),))


def _reduce_extreme(op, a, axis, arg_fn, np_fn):
    a = _as_tensor(a)
    if a.size == 0:
        raise ShapeError(f"{op}: empty input")
    data = np_fn(a.data, axis=axis)
    shape = a.shape
    if axis is None:
        flat_idx = arg_fn(a.data)

        def vjp(g):
            ga = np.zeros(a.size)
            ga[flat_idx] = g
            return (ga.reshape(shape),)
    else:
        idx = np.expand_dims(arg_fn(a.data, axis=axis), axis)

        def vjp(g):
            ga = np.zeros(shape)
            np.put_along_axis(ga, idx, np.expand_dims(g, axis), axis=axis)
            return (ga,)

    return _result(op, data, (a,), vjp, check=False)


def reduce_max(a, axis=None):
    """Max along ``axis``; gradient routes to the first (lowest-index) argmax."""
    return _reduce_extreme("reduce_max", a, axis, np.argmax, np.max)


def reduce_min(a, axis=None):
    """Min along ``axis``; gradient routes to the first (lowest-index) argmin."""
    return _reduce_extreme("reduce_min", a, axis, np.argmin, np.min)


# ---------------------------------------------------------------------------
# neural-net ops
# ---------------------------------------------------------------------------

def softmax(a):
    """Numerically stable softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - inner),)

    return _result("softmax", data, (a,), vjp, check=False)


def layer_norm(x, gain, bias, eps=1e-5):
    """Layer normalization over the last axis with learnable gain and bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    dim = x.shape[-1]
    if gain.shape != (dim,) or bias.shape != (dim,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last axis {dim}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = gain.data * xhat + bias.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead)
        g_bias = g.sum(axis=lead)
        gx_hat = g * gain.data
        gx = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return (gx, g_gain, g_bias)

    return _result("layer_norm", data, (x, gain, bias), vjp)


def dropout(x, p, train, rng=None):
    """Inverted-scaling dropout; identity when not training or p == 0."""
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout: rate {p} outside [0, 1)")
    if not train or p == 0.0:
        return _result("dropout", x.data.copy(), (x,), lambda g: (g,), check=False)
    if rng is None:
        raise ShapeError("dropout: rng required in train mode with p > 0")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result("dropout", x.data * keep, (x,), lambda g: (g * keep,), check=False)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss, store=None):
    """Run reverse-mode differentiation from a scalar loss.

    Gradients accumulate into ``.grad`` of every reachable leaf tensor that
    requires grad. The tape is freed afterwards; a second backward through the
    same graph raises ``GraphError``. With a ``ParamStore`` passed as
    ``store``, returns a name -> gradient dict covering every registered
    parameter (zeros for parameters the loss does not depend on).
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward: loss must be a Tensor")
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._done:
        raise GraphError("backward: graph already consumed")
    if not loss.requires_grad:
        raise GraphError("backward: loss does not require grad")

    order = _topo_order(loss)
    for node in order:
        # freed intermediates keep their op tag; catching them here prevents
        # silently treating a consumed subgraph as a constant leaf
        if node._op != "leaf" and node._vjp is None:
            raise GraphError("backward: graph already consumed")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            # leaf: accumulate across backward calls
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            _check_finite(pg, f"backward({node._op})")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    for node in order:
        if node._vjp is not None:
            node._vjp = None
            node._parents = ()
    loss._done = True

    if store is not None:
        return store.gradients()
    return None


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def numeric_gradient(fn, tensors, index, eps=1e-5):
    """Central-difference gradient of scalar ``fn(*tensors)`` w.r.t. one input."""
    base = tensors[index].data
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = float(fn(*tensors).data)
        flat[i] = keep - eps
        lo = float(fn(*tensors).data)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def gradient_check(fn, tensors, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must map the given tensors to a scalar tensor. Entries where both
    gradients are below 1e-6 in magnitude are treated as agreeing.
    """
    for t in tensors:
        t.zero_grad()
    loss = fn(*tensors)
    backward(loss)
    worst = 0.0
    for i, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(fn, tensors, i, eps=eps)
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        err = np.abs(analytic - numeric)
        mask = scale > 1e-6
        if np.any(mask):
            worst = max(worst, float((err[mask] / scale[mask]).max()))
    return worst
