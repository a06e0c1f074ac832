"""Layers, optimizer, and checkpoint I/O shared by all learned modules."""

from __future__ import annotations

import io
import struct
from typing import Iterable

import numba
import numpy as np

from . import engine
from .engine import Tensor

CHECKPOINT_MAGIC = b"CKPT"
CHECKPOINT_VERSION = 1


class Module:
    """Tiny parameter-registry base: parameters are Tensor attributes.

    Submodules and lists of submodules are discovered by attribute walk;
    `named_parameters` yields dotted names in a stable (sorted) order.
    """

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name in sorted(vars(self)):
            val = getattr(self, name)
            if isinstance(val, Tensor):
                if val.requires_grad:
                    out.append((name, val))
            elif isinstance(val, Module):
                out.extend((f"{name}.{k}", v) for k, v in val.named_parameters())
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend((f"{name}.{i}.{k}", v)
                                   for k, v in item.named_parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = dict(self.named_parameters())
        missing = set(named) - set(state)
        extra = set(state) - set(named)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, p in named.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()


def param(rng: np.random.Generator, shape: tuple, std: float | None = None) -> Tensor:
    """Gaussian-initialized trainable tensor; std defaults to 1/sqrt(fan_in)."""
    if std is None:
        fan_in = shape[0] if len(shape) == 1 else int(np.prod(shape[:-1]))
        std = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros_param(shape: tuple) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape: tuple) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.w = param(rng, (d_in, d_out))
        self.b = zeros_param((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = engine.matmul(x, self.w)
        return y if self.b is None else y + self.b


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gamma = ones_param((dim,))
        self.beta = zeros_param((dim,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return engine.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    """Projection weights for one attention block (self or cross)."""

    def __init__(self, rng: np.random.Generator, dim: int, heads: int, kv_dim: int | None = None):
        if dim % heads != 0:
            raise ValueError(f"hidden size {dim} not divisible by heads {heads}")
        kv_dim = dim if kv_dim is None else kv_dim
        self.wq = param(rng, (dim, dim))
        self.wk = param(rng, (kv_dim, dim))
        self.wv = param(rng, (kv_dim, dim))
        self.wo = param(rng, (dim, dim))
        self.heads = heads

    def __call__(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        return engine.multi_head_attention(x, self.wq, self.wk, self.wv,
                                           self.wo, self.heads, context=context)


class Mlp(Module):
    def __init__(self, rng: np.random.Generator, dim: int, hidden: int, d_out: int | None = None):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim if d_out is None else d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(engine.gelu(self.fc1(x)))


class EncoderBlock(Module):
    """Pre-norm transformer block: x' = MHA(LN(x)) + x; MLP(LN(x')) + x'.

    `out_scale` shrinks the residual-branch output projections (GPT-style
    1/sqrt(2L) init), which keeps deep stacks well-conditioned early on.
    """

    def __init__(self, rng: np.random.Generator, dim: int, heads: int,
                 mlp_ratio: int = 4, out_scale: float = 1.0):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.ln2 = LayerNorm(dim)
        self.mlp = Mlp(rng, dim, dim * mlp_ratio)
        if out_scale != 1.0:
            self.attn.wo.data *= out_scale
            self.mlp.fc2.w.data *= out_scale

    def __call__(self, x: Tensor) -> Tensor:
        x = self.attn(self.ln1(x)) + x
        return self.mlp(self.ln2(x)) + x


@numba.njit(cache=True, fastmath=True)
def _adam_kernel(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
    for i in range(p.size):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)


class Adam:
    """Standard Adam on float64 buffers; single fused pass per tensor."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-4,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.size) for p in self.params]
        self.v = [np.zeros(p.size) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            _adam_kernel(p.data.reshape(-1), np.ascontiguousarray(p.grad).reshape(-1),
                         m, v, self.lr, self.b1, self.b2, self.eps, bc1, bc2)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- checkpoint format ---------------------------------------------------------
#
# Little-endian binary layout:
#   magic "CKPT" | u32 version | u32 tensor count
#   per tensor: u16 name length | name utf-8 | u8 ndim | u32 dims... | f64 data


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(state)))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        state[name] = arr.astype(np.float64)
    return state
