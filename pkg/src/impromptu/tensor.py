"""Dense f32/u8 tensors with reverse-mode automatic differentiation.

Forward values live in numpy arrays; every differentiable op records a
backward closure over its parents, and Tensor.backward() replays them in
reverse topological order. u8 tensors are storage-only and never join the
graph.
"""

from __future__ import annotations

import math

import numpy as np

from .rng import RngStream


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction (inference path)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, dtype: str = "f32"):
        if dtype == "f32":
            self.data = np.asarray(data, dtype=np.float32)
        elif dtype == "u8":
            if requires_grad:
                raise ConfigError("u8 tensors cannot require gradients")
            self.data = np.asarray(data, dtype=np.uint8)
        else:
            raise ConfigError(f"unsupported dtype {dtype!r}")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._prev = ()

    # ---- basic introspection -------------------------------------------------

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
    def dtype(self) -> str:
        return "u8" if self.data.dtype == np.uint8 else "f32"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # ---- graph machinery -----------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if self.dtype != "f32":
            raise ConfigError("backward on non-f32 tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        if grad is None:
            self.grad = np.ones_like(self.data)
        else:
            self.grad = np.asarray(grad, dtype=np.float32)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
                # release closures eagerly; graphs are single-use
                node._backward = None
                node._prev = ()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float32)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_op(a, b, fwd, bwd_a, bwd_b, name):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast")
    out = Tensor(data)
    if _grad_enabled and (a.requires_grad or b.requires_grad):
        out.requires_grad = True
        out._prev = (a, b)

        def _backward():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(bwd_a(g, a.data, b.data, out.data), a.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(bwd_b(g, a.data, b.data, out.data), b.shape))

        out._backward = _backward
    return out


# ---- elementwise arithmetic ----------------------------------------------


def add(a, b):
    return _broadcast_op(a, b, lambda x, y: x + y,
                         lambda g, x, y, o: g, lambda g, x, y, o: g, "add")


def sub(a, b):
    return _broadcast_op(a, b, lambda x, y: x - y,
                         lambda g, x, y, o: g, lambda g, x, y, o: -g, "sub")


def mul(a, b):
    return _broadcast_op(a, b, lambda x, y: x * y,
                         lambda g, x, y, o: g * y, lambda g, x, y, o: g * x, "mul")


def div(a, b):
    return _broadcast_op(a, b, lambda x, y: x / y,
                         lambda g, x, y, o: g / y,
                         lambda g, x, y, o: -g * x / (y * y), "div")


def _unary(a, fwd, bwd, scalar_args=()):
    a = _as_tensor(a)
    data = fwd(a.data)
    out = Tensor(data)
    if _grad_enabled and a.requires_grad:
        out.requires_grad = True
        out._prev = (a,)

        def _backward():
            _accum(a, bwd(out.grad, a.data, out.data))

        out._backward = _backward
    return out


def neg(a):
    return _unary(a, lambda x: -x, lambda g, x, o: -g)


def exp(a):
    return _unary(a, np.exp, lambda g, x, o: g * o)


def log(a):
    return _unary(a, np.log, lambda g, x, o: g / x)


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0), lambda g, x, o: g * (x > 0))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    # tanh approximation of the Gaussian error linear unit
    def fwd(x):
        return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))

    def bwd(g, x, o):
        t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)

    return _unary(a, fwd, bwd)


def tanh(a):
    return _unary(a, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def sigmoid(a):
    return _unary(a, lambda x: 1.0 / (1.0 + np.exp(-x)), lambda g, x, o: g * o * (1.0 - o))


# ---- reductions and shape ops ---------------------------------------------


def tsum(a, axis=None, keepdims: bool = False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    out = Tensor(data)
    if _grad_enabled and a.requires_grad:
        out.requires_grad = True
        out._prev = (a,)

        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, axes)
            _accum(a, np.broadcast_to(g, a.shape))

        out._backward = _backward
    return out


def tmean(a, axis=None, keepdims: bool = False):
    a = _as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    if _grad_enabled and a.requires_grad:
        out.requires_grad = True
        out._prev = (a,)

        def _backward():
            _accum(a, out.grad.reshape(a.shape))

        out._backward = _backward
    return out


def transpose(a, axes):
    a = _as_tensor(a)
    out = Tensor(a.data.transpose(axes))
    inv = np.argsort(axes)
    if _grad_enabled and a.requires_grad:
        out.requires_grad = True
        out._prev = (a,)

        def _backward():
            _accum(a, out.grad.transpose(inv))

        out._backward = _backward
    return out


def index(a, key):
    """Basic slicing (no repeated fancy indices)."""
    a = _as_tensor(a)
    out = Tensor(a.data[key])
    if _grad_enabled and a.requires_grad:
        out.requires_grad = True
        out._prev = (a,)

        def _backward():
            g = np.zeros_like(a.data)
            g[key] = out.grad
            _accum(a, g)

        out._backward = _backward
    return out


def concat(tensors, axis: int = 0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out._prev = tuple(tensors)
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def _backward():
            g = out.grad
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

        out._backward = _backward
    return out


def embedding(table, indices):
    """Row lookup into a [V, d] table; grads scatter-add into the table."""
    table = _as_tensor(table)
    idx = np.asarray(indices)
    out = Tensor(table.data[idx])
    if _grad_enabled and table.requires_grad:
        out.requires_grad = True
        out._prev = (table,)

        def _backward():
            g = np.zeros_like(table.data)
            np.add.at(g, idx.reshape(-1), out.grad.reshape(-1, table.shape[-1]))
            _accum(table, g)

        out._backward = _backward
    return out


# ---- matmul ----------------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dims do not broadcast: {a.shape} vs {b.shape}")
    out = Tensor(data)
    if _grad_enabled and (a.requires_grad or b.requires_grad):
        out.requires_grad = True
        out._prev = (a, b)

        def _backward():
            g = out.grad
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                _accum(a, _unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                _accum(b, _unbroadcast(gb, b.shape))

        out._backward = _backward
    return out


# ---- softmax / losses ------------------------------------------------------


def softmax(a, axis: int = -1):
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    if np.isnan(m).any():
        raise ValueError("softmax: NaN in input")
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if _grad_enabled and a.requires_grad:
        out.requires_grad = True
        out._prev = (a,)

        def _backward():
            g = out.grad
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accum(a, y * (g - dot))

        out._backward = _backward
    return out


def cross_entropy(logits, targets):
    """Mean NLL of integer targets under softmax(logits) over the last axis."""
    logits = _as_tensor(logits)
    v = logits.shape[-1]
    idx = np.asarray(targets)
    if idx.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {idx.shape} vs logits {logits.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise ValueError(f"cross_entropy: target out of range [0, {v})")
    flat = logits.data.reshape(-1, v)
    fidx = idx.reshape(-1)
    m = flat.max(axis=1, keepdims=True)
    e = np.exp(flat - m)
    z = e.sum(axis=1, keepdims=True)
    logp = (flat - m) - np.log(z)
    n = flat.shape[0]
    loss = -logp[np.arange(n), fidx].mean()
    out = Tensor(np.float32(loss))
    if _grad_enabled and logits.requires_grad:
        out.requires_grad = True
        out._prev = (logits,)

        def _backward():
            p = e / z
            p[np.arange(n), fidx] -= 1.0
            _accum(logits, (out.grad * p / n).reshape(logits.shape))

        out._backward = _backward
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if eps <= 0:
        raise ConfigError("layer_norm eps must be > 0")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)
    if _grad_enabled and (x.requires_grad or gain.requires_grad or bias.requires_grad):
        out.requires_grad = True
        out._prev = (x, gain, bias)

        def _backward():
            g = out.grad
            if gain.requires_grad:
                _accum(gain, _unbroadcast(g * xhat, gain.shape))
            if bias.requires_grad:
                _accum(bias, _unbroadcast(g, bias.shape))
            if x.requires_grad:
                gx = g * gain.data
                m1 = gx.mean(axis=-1, keepdims=True)
                m2 = (gx * xhat).mean(axis=-1, keepdims=True)
                _accum(x, inv * (gx - m1 - xhat * m2))

        out._backward = _backward
    return out


def gumbel_softmax(logits, tau: float, rng: RngStream = None, hard: bool = False, noise=None):
    """Tempered softmax over Gumbel-perturbed logits; hard mode returns a
    straight-through one-hot (forward one-hot, backward through the soft path)."""
    if tau <= 0:
        raise ConfigError(f"gumbel_softmax tau must be > 0, got {tau}")
    logits = _as_tensor(logits)
    if noise is None:
        if rng is None:
            noise = np.zeros_like(logits.data)
        else:
            noise = rng.gumbel(logits.shape)
    soft = softmax(mul(add(logits, Tensor(noise)), 1.0 / tau), axis=-1)
    if not hard:
        return soft
    onehot = np.zeros_like(soft.data)
    am = soft.data.argmax(axis=-1)
    np.put_along_axis(onehot, am[..., None], 1.0, axis=-1)
    # forward carries the one-hot; gradient flows through the soft sample
    return add(soft, Tensor(onehot - soft.data))


def mse(a, b):
    d = sub(a, b)
    return tmean(mul(d, d))


# ---- operator sugar ---------------------------------------------------------

Tensor.__add__ = lambda self, o: add(self, o)
Tensor.__radd__ = lambda self, o: add(o, self)
Tensor.__sub__ = lambda self, o: sub(self, o)
Tensor.__rsub__ = lambda self, o: sub(o, self)
Tensor.__mul__ = lambda self, o: mul(self, o)
Tensor.__rmul__ = lambda self, o: mul(o, self)
Tensor.__truediv__ = lambda self, o: div(self, o)
Tensor.__rtruediv__ = lambda self, o: div(o, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, o: matmul(self, o)
Tensor.__getitem__ = lambda self, key: index(self, key)
Tensor.reshape = lambda self, *shape: reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])
Tensor.transpose = lambda self, *axes: transpose(self, axes)
Tensor.sum = lambda self, axis=None, keepdims=False: tsum(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: tmean(self, axis, keepdims)
Tensor.exp = lambda self: exp(self)
Tensor.log = lambda self: log(self)
Tensor.relu = lambda self: relu(self)
Tensor.tanh = lambda self: tanh(self)
Tensor.sigmoid = lambda self: sigmoid(self)
