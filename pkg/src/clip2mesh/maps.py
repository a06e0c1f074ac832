"""Normal-map container shared across prediction, synthesis, and recon."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NormalMap:
    """H x W x 3 unit (or zero) vectors in [-1,1] plus a foreground mask.

    Background pixels are exactly the zero vector; foreground norms stay
    within 1 + 1e-6 (tanh-bounded predictions may dip below 1).
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError("normal map must be (H,W,3)")
        if self.mask.shape != self.values.shape[:2]:
            raise ValueError("mask must match map resolution")

    def validate(self) -> None:
        norms = np.linalg.norm(self.values, axis=-1)
        if np.any(norms[self.mask] > 1.0 + 1e-6):
            raise ValueError("foreground normal exceeds unit length")
        if np.any(self.values[~self.mask] != 0.0):
            raise ValueError("background must be exactly zero")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("normal map must be finite")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def masked(self) -> np.ndarray:
        return self.values * self.mask[..., None]

    def encoded(self) -> np.ndarray:
        """[0,1] image (n*0.5+0.5 on foreground, zeros on background)."""
        img = self.values * 0.5 + 0.5
        img[~self.mask] = 0.0
        return img

    @classmethod
    def from_encoded(cls, img: np.ndarray, mask: np.ndarray) -> "NormalMap":
        vals = img * 2.0 - 1.0
        vals[~np.asarray(mask, dtype=bool)] = 0.0
        return cls(vals, mask)
