"""Neural building blocks: parameter/module containers, linear and conv
layers, attention, and the gated recurrent cell used by slot refinement."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .rng import RngStream
from .tensor import ConfigError, ShapeError, Tensor


class Parameter:
    """Named trainable tensor plus optimizer moment buffers."""

    def __init__(self, data, name: str = ""):
        self.tensor = Tensor(data, requires_grad=True)
        self.name = name
        self.opt_state: dict = {}

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.asarray(value, dtype=np.float32)

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        return f"Parameter({self.name or '?'}, shape={self.tensor.shape})"


class Module:
    """Container with ordered parameter discovery via attribute traversal."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(val, Parameter):
                val.name = path
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}")
                    elif isinstance(item, Parameter):
                        item.name = f"{path}.{i}"
                        yield f"{path}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.tensor.grad = None

    def set_training(self, mode: bool):
        for m in self._submodules():
            m.training = mode
        self.training = mode

    def _submodules(self):
        out = []
        for val in vars(self).values():
            if isinstance(val, Module):
                out.append(val)
                out.extend(val._submodules())
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        out.append(item)
                        out.extend(item._submodules())
        return out

    def param_count(self) -> int:
        return sum(p.tensor.size for p in self.parameters())

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            if state[name].shape != p.data.shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {state[name].shape} vs model {p.data.shape}")
            p.data = state[name]


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: RngStream, bias: bool = True):
        limit = math.sqrt(6.0 / (d_in + d_out))
        self.weight = Parameter(rng.uniform((d_in, d_out), -limit, limit))
        self.bias = Parameter(np.zeros(d_out, dtype=np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight.tensor)
        if self.bias is not None:
            y = T.add(y, self.bias.tensor)
        return y

    __call__ = forward


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(d, dtype=np.float32))
        self.bias = Parameter(np.zeros(d, dtype=np.float32))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain.tensor, self.bias.tensor, self.eps)

    __call__ = forward


class Embedding(Module):
    def __init__(self, count: int, d: int, rng: RngStream):
        self.weight = Parameter(rng.normal((count, d), 0.0, 1.0 / math.sqrt(d)))

    def forward(self, indices) -> Tensor:
        return T.embedding(self.weight.tensor, indices)

    __call__ = forward


class Dropout(Module):
    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x: Tensor, rng: RngStream = None) -> Tensor:
        if not self.training or self.p == 0.0 or rng is None:
            return x
        keep = (rng.uniform(x.shape) >= self.p).astype(np.float32) / (1.0 - self.p)
        return T.mul(x, Tensor(keep))

    __call__ = forward


class MLP(Module):
    """Two-layer feedforward block with GELU."""

    def __init__(self, d: int, hidden: int, rng: RngStream, d_out: int = None):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d_out if d_out is not None else d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))

    __call__ = forward


def causal_mask(size: int) -> np.ndarray:
    """Additive mask: -inf above the diagonal."""
    m = np.zeros((size, size), dtype=np.float32)
    m[np.triu_indices(size, k=1)] = -np.inf
    return m


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head projection and output mix."""

    def __init__(self, d: int, heads: int, rng: RngStream):
        if d % heads != 0:
            raise ConfigError(f"model width {d} not divisible by {heads} heads")
        self.heads = heads
        self.d_head = d // heads
        self.q_proj = Linear(d, d, rng)
        self.k_proj = Linear(d, d, rng)
        self.v_proj = Linear(d, d, rng)
        self.out_proj = Linear(d, d, rng)

    def forward(self, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray = None) -> Tensor:
        b, lq, d = q.shape
        lk = k.shape[-2]
        h, dh = self.heads, self.d_head
        qh = T.transpose(T.reshape(self.q_proj(q), (b, lq, h, dh)), (0, 2, 1, 3))
        kh = T.transpose(T.reshape(self.k_proj(k), (b, lk, h, dh)), (0, 2, 1, 3))
        vh = T.transpose(T.reshape(self.v_proj(v), (b, lk, h, dh)), (0, 2, 1, 3))
        att = T.mul(T.matmul(qh, T.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        if mask is not None:
            if mask.shape != (lq, lk) and mask.shape[-2:] != (lq, lk):
                raise ShapeError(f"mask shape {mask.shape} vs attention ({lq}, {lk})")
            att = T.add(att, Tensor(mask))
        att = T.softmax(att, axis=-1)
        out = T.matmul(att, vh)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, lq, d))
        return self.out_proj(out)

    __call__ = forward


class TransformerBlock(Module):
    """Pre-norm block: self-attention, optional cross-attention, feedforward."""

    def __init__(self, d: int, heads: int, rng: RngStream, cross: bool = False,
                 mlp_ratio: int = 4, dropout: float = 0.0):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.cross_attn = MultiHeadAttention(d, heads, rng) if cross else None
        self.ln_cross = LayerNorm(d) if cross else None
        self.ln2 = LayerNorm(d)
        self.mlp = MLP(d, mlp_ratio * d, rng)
        self.drop = Dropout(dropout)

    def forward(self, x: Tensor, ctx: Tensor = None, self_mask: np.ndarray = None,
                rng: RngStream = None) -> Tensor:
        h = self.ln1(x)
        x = T.add(x, self.drop(self.attn(h, h, h, mask=self_mask), rng))
        if self.cross_attn is not None:
            if ctx is None:
                raise ConfigError("cross-attention block called without context")
            h = self.ln_cross(x)
            x = T.add(x, self.drop(self.cross_attn(h, ctx, ctx), rng))
        x = T.add(x, self.drop(self.mlp(self.ln2(x)), rng))
        return x

    __call__ = forward


# ---- convolution ------------------------------------------------------------


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    sb, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (b, c, k, k, oh, ow), (sb, sc, sh, sw, stride * sh, stride * sw))
    return np.ascontiguousarray(view).reshape(b, c * k * k, oh * ow), oh, ow


def _col2im(cols: np.ndarray, k: int, stride: int, pad: int,
            oh: int, ow: int, out_h: int, out_w: int) -> np.ndarray:
    b = cols.shape[0]
    c = cols.shape[1] // (k * k)
    cols = cols.reshape(b, c, k, k, oh, ow)
    full_h = (oh - 1) * stride + k
    full_w = (ow - 1) * stride + k
    buf = np.zeros((b, c, full_h, full_w), dtype=np.float32)
    for kh in range(k):
        for kw in range(k):
            buf[:, :, kh:kh + stride * oh:stride, kw:kw + stride * ow:stride] += cols[:, :, kh, kw]
    return buf[:, :, pad:pad + out_h, pad:pad + out_w]


class Conv2d(Module):
    """3x3-style convolution; output extent is ceil(H / stride)."""

    def __init__(self, c_in: int, c_out: int, rng: RngStream, kernel: int = 3,
                 stride: int = 1, padding: int = 1):
        scale = math.sqrt(2.0 / (c_in * kernel * kernel))
        self.weight = Parameter(rng.normal((c_out, c_in, kernel, kernel), 0.0, scale))
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32))
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        w, bias = self.weight.tensor, self.bias.tensor
        if x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv2d: input channels {x.shape[1]} vs weight {w.shape[1]}")
        k, s, p = self.kernel, self.stride, self.padding
        b, c, h, wid = x.shape
        cols, oh, ow = _im2col(x.data, k, s, p)
        wf = w.data.reshape(w.shape[0], -1)
        out_data = (wf[None] @ cols).reshape(b, w.shape[0], oh, ow) + bias.data[None, :, None, None]
        out = Tensor(out_data)
        if T.grad_enabled() and (x.requires_grad or w.requires_grad or bias.requires_grad):
            out.requires_grad = True
            out._prev = (x, w, bias)

            def _backward():
                g = out.grad.reshape(b, w.shape[0], oh * ow)
                if bias.requires_grad:
                    T._accum(bias, g.sum(axis=(0, 2)))
                if w.requires_grad:
                    gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
                    T._accum(w, gw.reshape(w.shape))
                if x.requires_grad:
                    dcols = np.matmul(wf.T[None], g)
                    T._accum(x, _col2im(dcols, k, s, p, oh, ow, h, wid))

            out._backward = _backward
        return out

    __call__ = forward


class ConvTranspose2d(Module):
    """Adjoint of the strided convolution; stride 2 doubles the extent."""

    def __init__(self, c_in: int, c_out: int, rng: RngStream, kernel: int = 3,
                 stride: int = 1, padding: int = 1):
        scale = math.sqrt(2.0 / (c_in * kernel * kernel))
        self.weight = Parameter(rng.normal((c_in, c_out, kernel, kernel), 0.0, scale))
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32))
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        w, bias = self.weight.tensor, self.bias.tensor
        if x.shape[1] != w.shape[0]:
            raise ShapeError(f"conv_transpose2d: input channels {x.shape[1]} vs weight {w.shape[0]}")
        k, s, p = self.kernel, self.stride, self.padding
        b, c_in, h, wid = x.shape
        c_out = w.shape[1]
        out_h, out_w = s * h, s * wid
        wf = w.data.reshape(c_in, -1)
        dcols = np.matmul(wf.T[None], x.data.reshape(b, c_in, h * wid))
        out_data = _col2im(dcols, k, s, p, h, wid, out_h, out_w) + bias.data[None, :, None, None]
        out = Tensor(out_data)
        if T.grad_enabled() and (x.requires_grad or w.requires_grad or bias.requires_grad):
            out.requires_grad = True
            out._prev = (x, w, bias)

            def _backward():
                g = out.grad
                if bias.requires_grad:
                    T._accum(bias, g.sum(axis=(0, 2, 3)))
                gcols, goh, gow = _im2col(g, k, s, p)
                if w.requires_grad:
                    gw = np.matmul(x.data.reshape(b, c_in, h * wid), gcols.transpose(0, 2, 1)).sum(axis=0)
                    T._accum(w, gw.reshape(w.shape))
                if x.requires_grad:
                    gx = np.matmul(wf[None], gcols).reshape(b, c_in, goh, gow)
                    T._accum(x, gx)

            out._backward = _backward
        return out

    __call__ = forward


class GRUCell(Module):
    """Gated recurrent update; update gate at 1 passes the state through."""

    def __init__(self, d: int, rng: RngStream):
        self.w_z = Linear(d, d, rng)
        self.u_z = Linear(d, d, rng, bias=False)
        self.w_r = Linear(d, d, rng)
        self.u_r = Linear(d, d, rng, bias=False)
        self.w_h = Linear(d, d, rng)
        self.u_h = Linear(d, d, rng, bias=False)

    def forward(self, state: Tensor, inp: Tensor) -> Tensor:
        if state.shape != inp.shape:
            raise ShapeError(f"gru_cell: state {state.shape} vs input {inp.shape}")
        z = T.sigmoid(T.add(self.w_z(inp), self.u_z(state)))
        r = T.sigmoid(T.add(self.w_r(inp), self.u_r(state)))
        cand = T.tanh(T.add(self.w_h(inp), self.u_h(T.mul(r, state))))
        return T.add(T.mul(z, state), T.mul(T.sub(Tensor(np.float32(1.0)), z), cand))

    __call__ = forward
