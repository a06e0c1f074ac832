"""Minimal reverse-mode autodiff engine on float64 numpy arrays.

Every learned component in this package (normal predictors, temporal
fusion, occupancy net, body fitting) runs on this engine. Ops build an
implicit compute graph; `backward` walks it in reverse topological order
and accumulates gradients additively at fan-out. All math is 64-bit and
deterministic, so analytic gradients can be held to tight
finite-difference tolerances.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special as _special

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure forward eval)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float64 n-d array with an optional gradient buffer.

    Non-leaf tensors remember their parents and a backward closure; the
    closure receives the output gradient and adds contributions into the
    parents, so no reference cycles are created and graphs free eagerly.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = parents
        self._backward = backward

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self.op!r}{flag})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __pow__(self, exponent: float):
        return powc(self, float(exponent))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tmean(self, axis, keepdims)

    def backward(self) -> None:
        """Reverse-mode pass from this scalar; fills leaf .grad buffers."""
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _track(*inputs: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in inputs)


def _make(data: np.ndarray, op: str, inputs: tuple, backward_fn) -> Tensor:
    if _track(*inputs):
        return Tensor(data, requires_grad=True, op=op, parents=inputs,
                      backward=backward_fn)
    return Tensor(data, op=op)


def _accum(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution into t.grad (fan-out accumulates).

    The first store always copies: pass-through backwards (add, reshape)
    hand over the child's own grad buffer, and aliasing it would let a
    later in-place += corrupt gradients still being consumed.
    """
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over axes that were broadcast up from `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- graph walking ---------------------------------------------------------


@dataclass(frozen=True)
class OpRecord:
    """One node of a traced compute graph."""

    op: str
    inputs: tuple
    output: Tensor


class ComputeGraph:
    """Topologically ordered op records reachable from one output tensor."""

    def __init__(self, records: list[OpRecord]):
        self.records = records

    @classmethod
    def trace(cls, output: Tensor) -> "ComputeGraph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        index = {id(t): i for i, t in enumerate(order)}
        records = [OpRecord(t.op, tuple(index[id(p)] for p in t._parents), t)
                   for t in order]
        return cls(records)

    def __len__(self) -> int:
        return len(self.records)


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss.

    Intermediate gradients are freed as soon as they are consumed, which
    keeps peak memory near the activation footprint.
    """
    if loss.size != 1:
        raise ValueError("backward requires a scalar loss")
    graph = ComputeGraph.trace(loss)
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(graph.records):
        node = rec.output
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if node._parents and node is not loss:
            node.grad = None  # free intermediate buffers eagerly


def gradients(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """d loss / d p for each p; zeros for params unreachable from loss."""
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    backward(loss)
    out = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
           for p in params]
    for p, s in zip(params, saved):
        p.grad = s
    return out


# -- arithmetic ------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, "add", (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out, "sub", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, "mul", (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * out / b.data, b.data.shape))

    return _make(out, "div", (a, b), bwd)


def powc(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent

    def bwd(g):
        _accum(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(out, "pow", (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    out = a.data @ b.data

    def bwd(g):
        _accum(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        _accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return _make(out, "matmul", (a, b), bwd)


# -- elementwise nonlinearities ---------------------------------------------


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out)

    return _make(out, "exp", (a,), bwd)


def tlog(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _make(out, "log", (a,), bwd)


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bwd(g):
        _accum(a, g * 0.5 / out)

    return _make(out, "sqrt", (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, "tanh", (a,), bwd)


def tsin(a: Tensor) -> Tensor:
    out = np.sin(a.data)

    def bwd(g):
        _accum(a, g * np.cos(a.data))

    return _make(out, "sin", (a,), bwd)


def tcos(a: Tensor) -> Tensor:
    out = np.cos(a.data)

    def bwd(g):
        _accum(a, -g * np.sin(a.data))

    return _make(out, "cos", (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out = _special.expit(a.data)

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, "sigmoid", (a,), bwd)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-form) GELU."""
    cdf = 0.5 * (1.0 + _special.erf(a.data * _INV_SQRT2))
    out = a.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        _accum(a, g * (cdf + a.data * pdf))

    return _make(out, "gelu", (a,), bwd)


def tabs(a: Tensor) -> Tensor:
    out = np.abs(a.data)

    def bwd(g):
        _accum(a, g * np.sign(a.data))

    return _make(out, "abs", (a,), bwd)


def clip(a: Tensor, lo: float | None, hi: float | None) -> Tensor:
    out = np.clip(a.data, lo, hi)

    def bwd(g):
        mask = np.ones_like(a.data)
        if lo is not None:
            mask *= a.data >= lo
        if hi is not None:
            mask *= a.data <= hi
        _accum(a, g * mask)

    return _make(out, "clip", (a,), bwd)


# -- reductions --------------------------------------------------------------


def _axis_tuple(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(out, "sum", (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    count = float(np.prod([a.data.shape[i] for i in axes])) if axes else 1.0
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g / count, a.data.shape).copy())

    return _make(out, "mean", (a,), bwd)


def tmin(a: Tensor, axis: int) -> Tensor:
    """Min over one axis; subgradient flows to the first argmin on ties."""
    axis = axis % a.ndim
    idx = a.data.argmin(axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    out = np.squeeze(out, axis=axis)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        _accum(a, ga)

    return _make(out, "min", (a,), bwd)


# -- shape ops ----------------------------------------------------------------


def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(out, "reshape", (a,), bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    out = a.data.transpose(axes)
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _make(out, "transpose", (a,), bwd)


def getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[key] += g
        _accum(a, ga)

    return _make(out, "getitem", (a,), bwd)


def index_take(a: Tensor, idx: np.ndarray, axis: int = 0) -> Tensor:
    """Gather rows along an axis; repeated indices accumulate in backward."""
    idx = np.asarray(idx)
    out = np.take(a.data, idx, axis=axis)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (slice(None),) * axis + (idx,), g)
        _accum(a, ga)

    return _make(out, "index_take", (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = (slice(None),) * (axis % g.ndim) + (slice(lo, hi),)
            _accum(t, g[sl])

    return _make(out, "concat", tuple(tensors), bwd)


def pad(a: Tensor, pad_width: Sequence[tuple], value: float = 0.0) -> Tensor:
    pad_width = tuple(tuple(p) for p in pad_width)
    out = np.pad(a.data, pad_width, constant_values=value)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.data.shape))

    def bwd(g):
        _accum(a, g[sl])

    return _make(out, "pad", (a,), bwd)


# -- neural ops ---------------------------------------------------------------


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Softmax along one axis; rejects non-finite inputs."""
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("non-finite logits")
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accum(logits, out * (g - inner))

    return _make(out, "softmax", (logits,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ValueError("gamma/beta must match the last axis length")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = xc * istd
    out = xhat * gamma.data + beta.data

    def bwd(g):
        _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        _accum(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, istd * (dxhat - m1 - xhat * m2))

    return _make(out, "layer_norm", (x, gamma, beta), bwd)


def multi_head_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                         wo: Tensor, heads: int, context: Tensor | None = None) -> Tensor:
    """Scaled dot-product multi-head attention (the attention term only).

    `x` supplies queries; `context` (defaults to x for self-attention)
    supplies keys and values. Shapes are (..., N, D); scores are scaled by
    1/sqrt(D/heads). Residuals and norms are the caller's business.
    """
    d = x.data.shape[-1]
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by heads {heads}")
    kv = x if context is None else context
    dh = d // heads
    scale = 1.0 / np.sqrt(dh)

    def split(t: Tensor) -> Tensor:
        n = t.data.shape[-2]
        lead = t.data.shape[:-2]
        r = reshape(t, lead + (n, heads, dh))
        perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return transpose(r, perm)  # (..., heads, N, dh)

    q = split(matmul(x, wq))
    k = split(matmul(kv, wk))
    v = split(matmul(kv, wv))
    scores = mul(matmul(q, transpose(k, _swap_last2(k.ndim))), Tensor(scale))
    probs = softmax(scores, axis=-1)
    ctx = matmul(probs, v)  # (..., heads, Nq, dh)
    lead = ctx.data.shape[:-3]
    perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    merged = reshape(transpose(ctx, perm), lead + (x.data.shape[-2], d))
    return matmul(merged, wo)


def _swap_last2(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def conv2d(x: Tensor, w: Tensor, stride=(1, 1)) -> Tensor:
    """Valid (unpadded) 2-D convolution, x (H,W,Cin), w (kh,kw,Cin,Cout)."""
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    kh, kw, cin, cout = w.data.shape
    h, wd, cx = x.data.shape
    if cx != cin:
        raise ValueError("channel mismatch")
    if kh > h or kw > wd:
        raise ValueError("kernel larger than input")
    win = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(0, 1))
    win = win[::sh, ::sw]  # (oh, ow, Cin, kh, kw)
    oh, ow = win.shape[0], win.shape[1]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(oh, ow, cout)

    def bwd(g):
        gf = g.reshape(oh * ow, cout)
        _accum(w, (cols.T @ gf).reshape(w.data.shape))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for di in range(kh):
                for dj in range(kw):
                    gw = g @ w.data[di, dj].T  # (oh, ow, Cin)
                    gx[di:di + sh * oh:sh, dj:dj + sw * ow:sw] += gw
            _accum(x, gx)

    return _make(out, "conv2d", (x, w), bwd)


def conv3d(x: Tensor, w: Tensor, stride=(1, 1, 1)) -> Tensor:
    """Valid (unpadded) 3-D convolution, x (T,H,W,Cin), w (kt,kh,kw,Cin,Cout)."""
    st, sh, sw = (stride, stride, stride) if isinstance(stride, int) else stride
    kt, kh, kw, cin, cout = w.data.shape
    t, h, wd, cx = x.data.shape
    if cx != cin:
        raise ValueError("channel mismatch")
    if kt > t or kh > h or kw > wd:
        raise ValueError("kernel larger than input")
    win = np.lib.stride_tricks.sliding_window_view(x.data, (kt, kh, kw), axis=(0, 1, 2))
    win = win[::st, ::sh, ::sw]  # (ot, oh, ow, Cin, kt, kh, kw)
    ot, oh, ow = win.shape[0], win.shape[1], win.shape[2]
    cols = win.transpose(0, 1, 2, 4, 5, 6, 3).reshape(ot * oh * ow, kt * kh * kw * cin)
    wmat = w.data.reshape(kt * kh * kw * cin, cout)
    out = (cols @ wmat).reshape(ot, oh, ow, cout)

    def bwd(g):
        gf = g.reshape(ot * oh * ow, cout)
        _accum(w, (cols.T @ gf).reshape(w.data.shape))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for dt in range(kt):
                for di in range(kh):
                    for dj in range(kw):
                        gw = g @ w.data[dt, di, dj].T
                        gx[dt:dt + st * ot:st, di:di + sh * oh:sh,
                           dj:dj + sw * ow:sw] += gw
            _accum(x, gx)

    return _make(out, "conv3d", (x, w), bwd)


def grid_sample(feat: Tensor, uv: np.ndarray) -> Tensor:
    """Bilinear sample a (H,W,D) grid at continuous pixel coords (N,2).

    Integer coordinates address pixel centers; out-of-range queries clamp
    to the border. Differentiable w.r.t. the grid only (uv is data).
    """
    h, w = feat.data.shape[:2]
    uv = np.asarray(uv, dtype=np.float64)
    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    u0 = np.minimum(np.floor(u), w - 2 if w > 1 else 0).astype(np.int64)
    v0 = np.minimum(np.floor(v), h - 2 if h > 1 else 0).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    w00 = (1 - fu) * (1 - fv)
    w01 = fu * (1 - fv)
    w10 = (1 - fu) * fv
    w11 = fu * fv
    f = feat.data
    out = (w00 * f[v0, u0] + w01 * f[v0, u1] + w10 * f[v1, u0] + w11 * f[v1, u1])

    def bwd(g):
        gf = np.zeros_like(feat.data)
        np.add.at(gf, (v0, u0), w00 * g)
        np.add.at(gf, (v0, u1), w01 * g)
        np.add.at(gf, (v1, u0), w10 * g)
        np.add.at(gf, (v1, u1), w11 * g)
        _accum(feat, gf)

    return _make(out, "grid_sample", (feat,), bwd)


# -- verification harness ------------------------------------------------------


def finite_diff_check(fn: Callable[[], Tensor], params: Sequence[Tensor],
                      eps: float = 1e-5, max_coords: int = 16,
                      seed: int = 0) -> float:
    """Compare analytic gradients of `fn` against central differences.

    `fn` is a deterministic thunk producing a scalar Tensor from the given
    parameter tensors (which it reads by reference). Returns the max over
    sampled coordinates of |analytic - fd| / max(1, |analytic|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    base0 = fn()
    base1 = fn()
    if base0.data != base1.data:
        raise ValueError("non-deterministic function under test")

    grads = gradients(fn(), params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + eps
                hi = fn().item()
                flat[c] = orig - eps
                lo = fn().item()
            flat[c] = orig
            fd = (hi - lo) / (2.0 * eps)
            err = abs(gflat[c] - fd) / max(1.0, abs(gflat[c]))
            worst = max(worst, err)
    return worst
