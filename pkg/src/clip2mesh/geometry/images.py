"""Image file formats: 8-bit PNG and the raw float32 planar STTF format.

STTF layout (little-endian): 16-byte header of magic b"STTF" + u32 height,
width, channels, followed by float32 data in channel-major planes. It
exists so normal maps round-trip losslessly.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

STTF_MAGIC = b"STTF"


def save_png(path, img: np.ndarray) -> None:
    """Save a float image in [0,1] (H,W) or (H,W,3) as 8-bit PNG."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path)


def load_png(path) -> np.ndarray:
    """Load a PNG as float in [0,1]; RGB images come back (H,W,3)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr


def save_sttf(path, img: np.ndarray) -> None:
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    planar = np.ascontiguousarray(arr.transpose(2, 0, 1))
    with open(path, "wb") as fh:
        fh.write(STTF_MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(planar.astype("<f4").tobytes())


def load_sttf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if header[:4] != STTF_MAGIC:
            raise ValueError("not an STTF file")
        h, w, c = struct.unpack("<III", header[4:])
        data = np.frombuffer(fh.read(), dtype="<f4", count=h * w * c)
    arr = data.reshape(c, h, w).transpose(1, 2, 0).astype(np.float64)
    return arr[..., 0] if c == 1 else arr
