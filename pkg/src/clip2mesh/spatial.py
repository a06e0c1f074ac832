"""ViT-style normal predictors.

Two instances of the same architecture cover the two prediction roles:
RGB image -> front normal map, and front normal map -> back normal map.
Images are split into patches, linearly embedded with learned positional
embeddings, run through a pre-norm encoder, and projected back to
per-pixel 3-vectors bounded by tanh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine, nn
from .engine import Tensor

VARIANT_TABLE = {
    # variant: (layers, hidden size, heads)
    "ViT-B": (12, 768, 12),
    "ViT-L": (24, 1024, 16),
    "ViT-H": (32, 1280, 16),
}


class TrainingDiverged(RuntimeError):
    """Raised when the loss blows past the divergence guard."""


@dataclass
class SpatialTransformerConfig:
    image_size: tuple[int, int] = (128, 128)
    patch: int = 16
    layers: int = 12
    hidden: int = 768
    heads: int = 12
    mlp_ratio: int = 4
    in_channels: int = 3
    variant: str | None = None

    def __post_init__(self):
        h, w = self.image_size
        if (h * w) % (self.patch * self.patch) != 0 or h % self.patch or w % self.patch:
            raise ValueError("image size must be divisible by the patch size")
        if self.hidden % self.heads != 0:
            raise ValueError("hidden size must be divisible by heads")
        if self.variant is not None:
            expected = VARIANT_TABLE[self.variant]
            if (self.layers, self.hidden, self.heads) != expected:
                raise ValueError(f"{self.variant} must use l/h/m {expected}")

    @classmethod
    def variant(cls, name: str, image_size=(128, 128), patch=16, in_channels=3):
        l, h, m = VARIANT_TABLE[name]
        return cls(image_size=image_size, patch=patch, layers=l, hidden=h,
                   heads=m, in_channels=in_channels, variant=name)

    @property
    def n_tokens(self) -> int:
        h, w = self.image_size
        return (h * w) // (self.patch * self.patch)


class SpatialTransformer(nn.Module):
    """Patch-token encoder with a per-token pixel head."""

    def __init__(self, config: SpatialTransformerConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        c = config
        self.config = c
        patch_dim = c.patch * c.patch * c.in_channels
        self.embed = nn.Linear(rng, patch_dim, c.hidden)
        self.pos = nn.param(rng, (c.n_tokens, c.hidden), std=0.02)
        scale = 1.0 / np.sqrt(max(2 * c.layers, 1))
        self.blocks = [nn.EncoderBlock(rng, c.hidden, c.heads, c.mlp_ratio, out_scale=scale)
                       for _ in range(c.layers)]
        self.head_ln = nn.LayerNorm(c.hidden)
        self.head = nn.Mlp(rng, c.hidden, c.hidden, d_out=c.patch * c.patch * 3)

    # `named_parameters` walks attributes alphabetically; `config` is not a
    # Tensor or Module so it is skipped automatically.

    def patchify(self, images: np.ndarray) -> np.ndarray:
        """(B,H,W,C) -> (B,N,P*P*C) row-major patch grid."""
        p = self.config.patch
        b, h, w, c = images.shape
        x = images.reshape(b, h // p, p, w // p, p, c)
        return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, (h // p) * (w // p), p * p * c)

    def tokens(self, images: np.ndarray) -> Tensor:
        """Patch embeddings plus positional embeddings (encoder input)."""
        patches = self.patchify(np.asarray(images, dtype=np.float64))
        return self.embed(Tensor(patches)) + self.pos

    def encode(self, z: Tensor) -> Tensor:
        for block in self.blocks:
            z = block(z)
        return z

    def forward(self, images: np.ndarray) -> Tensor:
        """(B,H,W,C) images -> (B,H,W,3) tanh-bounded normal maps."""
        single = images.ndim == 3
        if single:
            images = images[None]
        z = self.encode(self.tokens(images))
        out = self.head(self.head_ln(z))  # (B, N, P*P*3)
        maps = self.unpatchify(engine.tanh(out), images.shape[0])
        return maps[0] if single else maps

    def unpatchify(self, tok: Tensor, batch: int) -> Tensor:
        p = self.config.patch
        h, w = self.config.image_size
        x = engine.reshape(tok, (batch, h // p, w // p, p, p, 3))
        x = engine.transpose(x, (0, 1, 3, 2, 4, 5))
        return engine.reshape(x, (batch, h, w, 3))

    def __call__(self, images: np.ndarray) -> Tensor:
        return self.forward(images)


class PerceptualProxy:
    """Fixed-weight random strided conv stack standing in for a pretrained
    perceptual network: three stride-2 layers, feature MSE averaged over
    the three scales."""

    CHANNELS = (8, 16, 16)
    KERNEL = 4

    def __init__(self, in_channels: int = 3, seed: int = 2024):
        rng = np.random.default_rng(seed)
        self.kernels = []
        cin = in_channels
        for cout in self.CHANNELS:
            k = rng.normal(0.0, 1.0 / np.sqrt(self.KERNEL * self.KERNEL * cin),
                           size=(self.KERNEL, self.KERNEL, cin, cout))
            self.kernels.append(Tensor(k))  # constants, never trained
            cin = cout

    def features(self, img: Tensor) -> list[Tensor]:
        feats = []
        x = img
        for k in self.kernels:
            x = engine.tanh(engine.conv2d(x, k, stride=2))
            feats.append(x)
        return feats

    def loss(self, pred: Tensor, target: np.ndarray) -> Tensor:
        fp = self.features(pred)
        with engine.no_grad():
            ft = self.features(Tensor(np.asarray(target, dtype=np.float64)))
        total = None
        for a, b in zip(fp, ft):
            term = ((a - Tensor(b.data)) ** 2.0).mean()
            total = term if total is None else total + term
        return total * (1.0 / len(fp))


def mse_map_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Per-pixel squared-vector-norm error averaged over H*W (and batch)."""
    target = np.asarray(target, dtype=np.float64)
    diff = pred - Tensor(target)
    sq = diff * diff
    per_pixel = sq.sum(axis=-1)  # |delta|^2 per pixel
    return per_pixel.mean()


def normal_loss(pred: Tensor, target: np.ndarray, lambda_perc: float = 0.1,
                proxy: PerceptualProxy | None = None) -> Tensor:
    """Training loss: pixel MSE plus a weighted perceptual term."""
    loss = mse_map_loss(pred, target)
    if lambda_perc > 0.0:
        if proxy is None:
            proxy = PerceptualProxy(in_channels=pred.shape[-1])
        if pred.ndim == 4:
            per = None
            for i in range(pred.shape[0]):
                term = proxy.loss(pred[i], target[i])
                per = term if per is None else per + term
            loss = loss + per * (lambda_perc / pred.shape[0])
        else:
            loss = loss + proxy.loss(pred, target) * lambda_perc
    return loss


def predict_normals(image: np.ndarray, mask: np.ndarray,
                    front_model: SpatialTransformer,
                    back_model: SpatialTransformer) -> tuple[np.ndarray, np.ndarray]:
    """Front map from the image, back map from the front map, both masked."""
    m = np.asarray(mask, dtype=np.float64)[..., None]
    with engine.no_grad():
        nf = front_model(np.asarray(image, dtype=np.float64)).data * m
        nb = back_model(nf).data * m
    return nf, nb


def train_spatial(pairs: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
                  model: SpatialTransformer, seed: int = 0, steps: int = 5000,
                  lr: float = 1e-4, batch_size: int = 2, lambda_perc: float = 0.1,
                  warmup: int = 100, betas: tuple = (0.9, 0.99),
                  eval_every: int = 25, target_mse: float | None = None,
                  log_fn=None) -> list[tuple[int, float]]:
    """Adam training on (input, target map, mask) tuples.

    Stops early once the full-set pixel MSE drops below `target_mse`.
    Aborts with diagnostics when the loss exceeds 10x its initial value.
    Returns the (step, full-set MSE) evaluation curve.
    """
    rng = np.random.default_rng(seed)
    proxy = PerceptualProxy(in_channels=3) if lambda_perc > 0 else None
    opt = nn.Adam(model.parameters(), lr=lr, betas=betas)
    inputs = np.stack([np.asarray(p[0], dtype=np.float64) for p in pairs])
    targets = np.stack([np.asarray(p[1], dtype=np.float64) for p in pairs])
    masks = np.stack([np.asarray(p[2], dtype=np.float64) for p in pairs])[..., None]

    def full_mse() -> float:
        with engine.no_grad():
            total = 0.0
            for i in range(len(pairs)):
                pred = model(inputs[i]).data * masks[i]
                total += float(((pred - targets[i]) ** 2).sum(axis=-1).mean())
        return total / len(pairs)

    history: list[tuple[int, float]] = []
    initial = None
    for step in range(steps):
        # linear warmup then cosine decay to 5% of peak: memorization-style
        # fits stall on minibatch noise without the decay tail
        if step < warmup:
            opt.lr = lr * (step + 1) / max(warmup, 1)
        else:
            frac = (step - warmup) / max(steps - warmup, 1)
            opt.lr = lr * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * frac)))
        idx = rng.choice(len(pairs), size=min(batch_size, len(pairs)), replace=False)
        idx = np.sort(idx)
        pred = model(inputs[idx]) * Tensor(masks[idx])
        loss = normal_loss(pred, targets[idx], lambda_perc, proxy)
        val = loss.item()
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        if initial is None:
            initial = val
        if val > 10.0 * max(initial, 1e-12):
            raise TrainingDiverged(
                f"loss {val:.4g} exceeded 10x initial {initial:.4g} at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if (step + 1) % eval_every == 0 or step == steps - 1:
            m = full_mse()
            history.append((step + 1, m))
            if log_fn is not None:
                log_fn(step + 1, m)
            if target_mse is not None and m < target_mse:
                break
    if not history:
        history.append((steps, full_mse()))
    return history
