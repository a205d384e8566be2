"""Parameter storage, gradients, the Adam optimiser and finite-difference checks."""

from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeMismatch


def uniform_init(rng, shape, fan_in):
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParameterStore:
    """Named, ordered collection of trainable tensors.

    Shapes are fixed at registration; :meth:`assign` refuses a different
    shape. Iteration order is registration order.
    """

    def __init__(self):
        self._slots = OrderedDict()

    def add(self, name, value):
        if name in self._slots:
            raise ConfigError(f"parameter {name!r} already registered")
        t = ad.Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._slots[name] = t
        return t

    def assign(self, name, value):
        value = np.asarray(value, dtype=np.float64)
        slot = self._slots[name]
        if value.shape != slot.data.shape:
            raise ShapeMismatch(f"assign {name}", slot.data.shape, value.shape)
        slot.data = value.copy()

    def __getitem__(self, name):
        return self._slots[name]

    def __contains__(self, name):
        return name in self._slots

    def __iter__(self):
        return iter(self._slots)

    def __len__(self):
        return len(self._slots)

    def names(self):
        return list(self._slots)

    def items(self):
        return self._slots.items()

    def arrays(self):
        return {k: t.data.copy() for k, t in self._slots.items()}

    def load(self, arrays):
        for k, v in arrays.items():
            self.assign(k, v)

    def size(self):
        return sum(t.data.size for t in self._slots.values())


def gradient(loss, params):
    """Gradients of scalar ``loss`` for every slot in ``params``.

    Slots the loss does not depend on receive zeros.
    """
    grads = ad.backward(loss)
    out = OrderedDict()
    for name, t in params.items():
        g = grads.get(id(t))
        out[name] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64)
    return out


def clip_grad_norm(grads, max_norm):
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, t in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            t.data = t.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = {}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state(self, t, arrays):
        self.t = int(t)
        for k in self.m:
            self.m[k] = np.array(arrays[f"adam.m.{k}"], dtype=np.float64)
            self.v[k] = np.array(arrays[f"adam.v.{k}"], dtype=np.float64)


def finite_difference(fn, params, names=None, h=1e-5):
    """Central-difference gradient of ``fn()``.

    ``fn`` returns a scalar (Tensor or float) or a dict of named scalars;
    in the dict case every perturbation is evaluated once for all of them
    and the result maps each key to its own gradient dict.
    """
    first = fn()
    keys = list(first) if isinstance(first, dict) else None

    def values():
        out = fn()
        if keys is None:
            return [float(np.asarray(_value(out)))]
        return [float(np.asarray(_value(out[k]))) for k in keys]

    grads = [OrderedDict() for _ in (keys or [None])]
    for name in names or params.names():
        t = params[name]
        flat = t.data.reshape(-1)
        gflat = np.zeros((len(grads), flat.size))
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = values()
            flat[k] = orig - h
            fm = values()
            flat[k] = orig
            gflat[:, k] = (np.array(fp) - np.array(fm)) / (2.0 * h)
        for g, row in zip(grads, gflat):
            g[name] = row.reshape(t.data.shape)
    return grads[0] if keys is None else dict(zip(keys, grads))


def _value(x):
    return x.data if isinstance(x, ad.Tensor) else x


def _violations(analytic, numeric, rtol, atol):
    worst = {}
    for name, n in numeric.items():
        a = analytic[name]
        tol = atol + rtol * np.maximum(np.abs(a), np.abs(n))
        worst[name] = float(np.max(np.abs(a - n) / tol)) if a.size else 0.0
    return worst


def check_gradients(fn, params, names=None, h=1e-5, rtol=1e-4, atol=1e-8):
    """Compare autodiff and central-difference gradients.

    Returns ``(ok, worst)`` where ``worst`` maps each slot to its largest
    violation ratio ``|a - n| / (atol + rtol * max(|a|, |n|))``; a slot
    passes when that ratio is at most 1. When ``fn`` returns a dict of
    losses, ``worst`` is keyed by loss name, then slot.
    """
    out = fn()
    numeric = finite_difference(fn, params, names=names, h=h)
    if not isinstance(out, dict):
        worst = _violations(gradient(out, params), numeric, rtol, atol)
        return all(v <= 1.0 for v in worst.values()), worst
    worst = {k: _violations(gradient(out[k], params), numeric[k], rtol, atol) for k in out}
    return all(v <= 1.0 for w in worst.values() for v in w.values()), worst
