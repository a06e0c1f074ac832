"""Weak-perspective camera: uniform scale, principal offset, view along -z."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    """Orthographic projection with scale and 2-D offset.

    World +x maps to image right, world +y to image up (so v runs down),
    and the camera looks along -z from z = +inf: larger z is nearer.
    `depth_range` holds the volume z bounds used to normalize ray depth.
    """

    scale: float = 56.0
    cx: float = 64.0
    cy: float = 64.0
    height: int = 128
    width: int = 128
    depth_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("camera scale must be positive")
        if self.height <= 0 or self.width <= 0:
            raise ValueError("image size must be positive")

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(N,3) world points -> ((N,2) pixel uv, (N,) depth in [0,1]).

        Depth is distance along the ray normalized over the volume z
        bounds: z = hi maps to 0 (near), z = lo maps to 1 (far).
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        u = self.scale * points[:, 0] + self.cx
        v = -self.scale * points[:, 1] + self.cy
        zlo, zhi = self.depth_range
        depth = (zhi - points[:, 2]) / (zhi - zlo)
        return np.stack([u, v], axis=1), depth

    def view_dir_to_camera(self) -> np.ndarray:
        """Unit direction from any surface point toward the camera."""
        return np.array([0.0, 0.0, 1.0])


def bilinear_sample(feat: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear sample of an (H,W,D) grid at (N,2) pixel coords.

    Integer coordinates address pixel centers; queries outside the grid
    clamp to the border. Pure numpy twin of engine.grid_sample.
    """
    feat = np.asarray(feat, dtype=np.float64)
    squeeze_d = feat.ndim == 2
    if squeeze_d:
        feat = feat[..., None]
    h, w = feat.shape[:2]
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    u0 = np.minimum(np.floor(u), w - 2 if w > 1 else 0).astype(np.int64)
    v0 = np.minimum(np.floor(v), h - 2 if h > 1 else 0).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    out = ((1 - fu) * (1 - fv) * feat[v0, u0] + fu * (1 - fv) * feat[v0, u1]
           + (1 - fu) * fv * feat[v1, u0] + fu * fv * feat[v1, u1])
    return out[:, 0] if squeeze_d else out


def visibility(points: np.ndarray, field, cam: Camera) -> np.ndarray:
    """Camera visibility of query points via their closest surface points.

    A query inherits the visibility of its closest point on the mesh: the
    closest face is visible iff the angle between the line of sight
    (surface toward camera) and the face normal is under 90 degrees,
    i.e. dot > 0 strictly; an exactly perpendicular face is invisible.
    """
    _, _, face_idx = field.query(points)
    normals = field.mesh.face_normals[face_idx]
    return normals @ cam.view_dir_to_camera() > 0.0
