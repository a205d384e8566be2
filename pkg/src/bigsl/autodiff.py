"""
Minimal reverse-mode automatic differentiation on numpy arrays.

Every value that takes part in a loss is wrapped in a :class:`Tensor`.
Operations record their parents and a closure mapping the output
gradient to parent gradients; :func:`backward` walks the recorded graph
in reverse topological order.

Only the primitives needed by the model are provided: matrix multiply,
broadcasting arithmetic, concatenation, indexing, sigmoid / tanh /
LeakyReLU, softmax and log-softmax, clamped log and exp, row
normalisation and cosine similarity, reductions.
"""

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch

LOG_FLOOR = 1e-12
EXP_CLAMP = 60.0
LEAKY_SLOPE = 0.01


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __rmatmul__ = lambda self, other: matmul(other, self)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, p: power(self, p)
    __getitem__ = lambda self, idx: take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    """Build an output node; grad tracking is on when any parent tracks."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


# --- arithmetic -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    ad = a.data
    return _node(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    if bd.ndim == 1:
        return _node(ad @ bd, (a, b), lambda g: (np.outer(g, bd), ad.T @ g))
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# --- shape ----------------------------------------------------------------

def transpose(a):
    return _node(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take(a, idx):
    """Basic or fancy indexing; gradients scatter-add back."""
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.int64)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            x != y for k, (x, y) in enumerate(zip(ref, t.shape)) if k != axis % len(ref)
        ):
            raise ShapeMismatch("concat", ref, t.shape)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeMismatch("stack", tensors[0].shape, t.shape)
    n = len(tensors)
    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.take(g, k, axis=axis) for k in range(n)))


def where(mask, a, b):
    """Select from ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    sa, sb = a.shape, b.shape
    return _node(np.where(mask, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(mask, g, 0.0), sa),
                            _unbroadcast(np.where(mask, 0.0, g), sb)))


# --- reductions -----------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod([a.shape[k] for k in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def squared_norm(a, axis=None):
    return tsum(a * a, axis=axis)


# --- element-wise ---------------------------------------------------------

def exp(a):
    x = np.clip(a.data, -EXP_CLAMP, EXP_CLAMP)
    out = np.exp(x)
    inside = (a.data > -EXP_CLAMP) & (a.data < EXP_CLAMP)
    return _node(out, (a,), lambda g: (g * out * inside,))


def log(a):
    x = np.maximum(a.data, LOG_FLOOR)
    inside = a.data > LOG_FLOOR
    return _node(np.log(x), (a,), lambda g: (g / x * inside,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a, slope=LEAKY_SLOPE):
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope)
    return _node(a.data * scale, (a,), lambda g: (g * scale,))


def softmax(a, axis=-1):
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), backward)


def log_softmax(a, axis=-1):
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), backward)


def l2_normalize(a, axis=-1):
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    out = a.data / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return _node(out, (a,), backward)


def cosine_matrix(a, b):
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch("cosine", a.shape, b.shape)
    return l2_normalize(a) @ l2_normalize(b).T


def cosine(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch("cosine", a.shape, b.shape)
    return tsum(l2_normalize(a) * l2_normalize(b))


# --- backward pass --------------------------------------------------------

def _toposort(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss):
    """Return a mapping ``id(tensor) -> gradient`` for every tracked node."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                grads[id(node)] = g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads
