"""Z-buffer software rasterization: normal maps, masks, depth, shaded RGB.

The same kernel renders the camera-facing surface (min-depth test) and the
far side (max-depth test), which is how back normal maps are produced in
the front camera's pixel grid.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .camera import Camera
from .mesh import TriMesh

_BG_DEPTH_FRONT = 1.0
_BG_DEPTH_BACK = 0.0


@njit(cache=True)
def _raster_core(v2d, vdepth, faces, vattr, fattr, use_flat, renorm, back, h, w,
                 img, mask, zbuf):
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        ax, ay = v2d[i0, 0], v2d[i0, 1]
        bx, by = v2d[i1, 0], v2d[i1, 1]
        cx, cy = v2d[i2, 0], v2d[i2, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area) < 1e-12:
            continue  # edge-on in projection
        xmin = max(int(np.ceil(min(ax, min(bx, cx)))), 0)
        xmax = min(int(np.floor(max(ax, max(bx, cx)))), w - 1)
        ymin = max(int(np.ceil(min(ay, min(by, cy)))), 0)
        ymax = min(int(np.floor(max(ay, max(by, cy)))), h - 1)
        if xmin > xmax or ymin > ymax:
            continue
        tol = 1e-9 * abs(area)
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                w0 = (cx - bx) * (py - by) - (cy - by) * (px - bx)
                w1 = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
                w2 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                if area < 0.0:
                    w0, w1, w2 = -w0, -w1, -w2
                if w0 < -tol or w1 < -tol or w2 < -tol:
                    continue
                s = w0 + w1 + w2
                if s == 0.0:
                    continue
                l0 = w0 / s
                l1 = w1 / s
                l2 = w2 / s
                d = l0 * vdepth[i0] + l1 * vdepth[i1] + l2 * vdepth[i2]
                closer = d < zbuf[py, px] if not back else d > zbuf[py, px]
                if not closer:
                    continue
                zbuf[py, px] = d
                mask[py, px] = 1
                if use_flat:
                    img[py, px, 0] = fattr[f, 0]
                    img[py, px, 1] = fattr[f, 1]
                    img[py, px, 2] = fattr[f, 2]
                else:
                    n0 = l0 * vattr[i0, 0] + l1 * vattr[i1, 0] + l2 * vattr[i2, 0]
                    n1 = l0 * vattr[i0, 1] + l1 * vattr[i1, 1] + l2 * vattr[i2, 1]
                    n2 = l0 * vattr[i0, 2] + l1 * vattr[i1, 2] + l2 * vattr[i2, 2]
                    if renorm:
                        norm = np.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
                        if norm > 1e-30:
                            n0 /= norm
                            n1 /= norm
                            n2 /= norm
                    img[py, px, 0] = n0
                    img[py, px, 1] = n1
                    img[py, px, 2] = n2


def _run(mesh: TriMesh, cam: Camera, vattr, fattr, use_flat: bool, renorm: bool,
         back: bool):
    h, w = cam.height, cam.width
    img = np.zeros((h, w, 3))
    mask = np.zeros((h, w), dtype=np.uint8)
    zbuf = np.full((h, w), _BG_DEPTH_BACK if back else 1e30)
    if back:
        zbuf[:] = -1e30
    if not mesh.is_empty:
        uv, depth = cam.project(mesh.vertices)
        _raster_core(uv, depth, mesh.faces, vattr, fattr, use_flat, renorm,
                     back, h, w, img, mask, zbuf)
    bg = ~mask.astype(bool)
    zbuf[bg] = _BG_DEPTH_BACK if back else _BG_DEPTH_FRONT
    return img, mask.astype(bool), zbuf


def render_channels(mesh: TriMesh, cam: Camera, back: bool = False,
                    shading: str = "smooth"):
    """Render (normals in [-1,1] with zero background, mask, depth).

    `back=True` keeps the farthest surface instead of the nearest
    (reversed depth test), producing the invisible-side map in the same
    pixel grid.
    """
    if shading == "smooth":
        vattr = mesh.vertex_normals if not mesh.is_empty else np.zeros((0, 3))
        fattr = np.zeros((max(mesh.n_faces, 1), 3))
        flat = False
    elif shading == "flat":
        vattr = np.zeros((max(mesh.n_vertices, 1), 3))
        fattr = mesh.face_normals if not mesh.is_empty else np.zeros((0, 3))
        flat = True
    else:
        raise ValueError(f"unknown shading {shading!r}")
    normals, mask, depth = _run(mesh, cam, vattr, fattr, flat, True, back)
    return normals, mask, depth


def rasterize(mesh: TriMesh, cam: Camera, mode: str = "normal_map",
              back: bool = False, shading: str = "smooth") -> np.ndarray:
    """Render one channel: encoded normal map, binary mask, or depth.

    Normal maps encode world-space unit normals as n*0.5 + 0.5 per RGB
    channel with (0,0,0) background.
    """
    if mesh.is_empty:
        raise ValueError("cannot rasterize an empty mesh")
    normals, mask, depth = render_channels(mesh, cam, back=back, shading=shading)
    if mode == "normal_map":
        return encode_normal_map(normals, mask)
    if mode == "mask":
        return mask.astype(np.float64)
    if mode == "depth":
        return depth
    raise ValueError(f"unknown mode {mode!r}")


def render_shaded(mesh: TriMesh, cam: Camera, light_dirs: np.ndarray,
                  light_colors: np.ndarray, albedo: np.ndarray,
                  ambient: float = 0.12) -> tuple[np.ndarray, np.ndarray]:
    """Flat-shaded Lambertian RGB render with a fixed directional rig.

    Returns (rgb in [0,1], coverage mask). Per-face colors use the face
    normal against each light (one-sided clamp).
    """
    dirs = np.asarray(light_dirs, dtype=np.float64)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    cols = np.asarray(light_colors, dtype=np.float64)
    lam = np.clip(mesh.face_normals @ dirs.T, 0.0, None)  # (F, L)
    base = np.asarray(albedo, dtype=np.float64).reshape(1, 3)
    face_rgb = np.clip(base * (ambient + lam @ cols), 0.0, 1.0)
    img, mask, _ = _run(mesh, cam, np.zeros((mesh.n_vertices, 3)), face_rgb,
                        True, False, False)
    return img, mask


def encode_normal_map(normals: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """[-1,1] normals -> [0,1] image, background pinned to (0,0,0)."""
    img = normals * 0.5 + 0.5
    img[~mask] = 0.0
    return img


def decode_normal_map(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """[0,1] encoded image -> [-1,1] normals, background zero vector."""
    n = img * 2.0 - 1.0
    n[~mask] = 0.0
    return n
