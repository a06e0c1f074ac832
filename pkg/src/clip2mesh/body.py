"""Simplified articulated parametric body standing in for a full human
model: a 24-joint capsule skeleton with linear shape scales, meshed as the
union SDF of its capsules, plus a silhouette/normal fitting optimizer.

Canonical rest pose (all-zero pose, unit scales, zero translation) is a
T-pose roughly 1.6 units tall centered near the origin, facing +z; its
bounding box stays inside [-0.85, 0.85] on every axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import Tensor
from .geometry.marching import marching_cubes
from .geometry.mesh import TriMesh
from .geometry.voxel import VoxelGrid

N_JOINTS = 24
N_SHAPE = 8

PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12,
                    13, 14, 16, 17, 18, 19, 20, 21], dtype=np.int64)

JOINT_NAMES = [
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar",
    "r_collar", "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hand", "r_hand",
]

# rest offsets from parent joint (T-pose, y up, +x is the body's left)
REST_OFFSETS = np.array([
    [0.00, 0.05, 0.00],    # pelvis (from origin)
    [0.09, -0.06, 0.00],   # l_hip
    [-0.09, -0.06, 0.00],  # r_hip
    [0.00, 0.11, 0.00],    # spine1
    [0.02, -0.38, 0.00],   # l_knee
    [-0.02, -0.38, 0.00],  # r_knee
    [0.00, 0.12, 0.00],    # spine2
    [0.00, -0.38, 0.00],   # l_ankle
    [0.00, -0.38, 0.00],   # r_ankle
    [0.00, 0.12, 0.00],    # spine3
    [0.015, -0.06, 0.10],  # l_foot
    [-0.015, -0.06, 0.10], # r_foot
    [0.00, 0.14, 0.00],    # neck
    [0.065, 0.08, 0.00],   # l_collar
    [-0.065, 0.08, 0.00],  # r_collar
    [0.00, 0.12, 0.00],    # head
    [0.11, 0.00, 0.00],    # l_shoulder
    [-0.11, 0.00, 0.00],   # r_shoulder
    [0.26, 0.00, 0.00],    # l_elbow
    [-0.26, 0.00, 0.00],   # r_elbow
    [0.25, 0.00, 0.00],    # l_wrist
    [-0.25, 0.00, 0.00],   # r_wrist
    [0.08, 0.00, 0.00],    # l_hand
    [-0.08, 0.00, 0.00],   # r_hand
])

# capsules run from parent joint to child joint; radius per child joint
CAPSULE_CHILDREN = np.arange(1, N_JOINTS)
CAPSULE_RADII = np.array([
    0.085, 0.085,          # hips
    0.105,                 # spine1
    0.062, 0.062,          # knees
    0.115,                 # spine2
    0.052, 0.052,          # ankles
    0.115,                 # spine3
    0.042, 0.042,          # feet
    0.052,                 # neck
    0.075, 0.075,          # collars
    0.092,                 # head
    0.052, 0.052,          # shoulders
    0.047, 0.047,          # elbows
    0.040, 0.040,          # wrists
    0.036, 0.036,          # hands
])

# shape scale roles: 0 global, 1 torso length, 2 torso girth, 3 arm length,
# 4 leg length, 5 limb girth, 6 head size, 7 shoulder/hip width
_TORSO = {3, 6, 9, 12}
_ARMS = {16, 17, 18, 19, 20, 21, 22, 23}
_LEGS = {4, 5, 7, 8, 10, 11}
_WIDTH = {1, 2, 13, 14}
_HEAD = {15}

_ARM_CHAIN = {13, 16, 18, 20, 22}  # left-arm joints (for region tests)


def _offset_shape_index(j: int) -> int | None:
    if j in _TORSO:
        return 1
    if j in _ARMS:
        return 3
    if j in _LEGS:
        return 4
    if j in _WIDTH:
        return 7
    if j in _HEAD:
        return 6
    return None


def _radius_shape_index(j: int) -> int | None:
    if j in _TORSO or j in _WIDTH:
        return 2
    if j in _ARMS or j in _LEGS:
        return 5
    if j in _HEAD:
        return 6
    return None


@dataclass
class BodyParams:
    """Pose (per-joint axis-angle), shape scales, and root translation."""

    pose: np.ndarray = field(default_factory=lambda: np.zeros((N_JOINTS, 3)))
    shape: np.ndarray = field(default_factory=lambda: np.ones(N_SHAPE))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(N_JOINTS, 3)
        self.shape = np.asarray(self.shape, dtype=np.float64).reshape(N_SHAPE)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.validate()

    def validate(self) -> None:
        if not np.all(np.isfinite(self.pose)):
            raise ValueError("pose angles must be finite")
        if np.any(self.shape < 0.5) or np.any(self.shape > 2.0):
            raise ValueError("shape scales must lie in [0.5, 2.0]")
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("translation must be finite")

    def copy(self) -> "BodyParams":
        return BodyParams(self.pose.copy(), self.shape.copy(), self.translation.copy())

    def to_json(self) -> str:
        return json.dumps({
            "pose_axis_angle_radians": self.pose.tolist(),
            "shape_scales": self.shape.tolist(),
            "translation": self.translation.tolist(),
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "BodyParams":
        obj = json.loads(text)
        return cls(np.array(obj["pose_axis_angle_radians"]),
                   np.array(obj["shape_scales"]),
                   np.array(obj["translation"]))


def a_pose() -> BodyParams:
    """Default relaxed pose: arms lowered about 55 degrees from T-pose."""
    p = BodyParams()
    p.pose[16, 2] = -0.95  # l_shoulder rotates arm down about +z
    p.pose[17, 2] = 0.95
    p.pose[13, 2] = -0.15
    p.pose[14, 2] = 0.15
    return p


# -- differentiable kinematics ---------------------------------------------------


def _skew(v: Tensor) -> Tensor:
    z = Tensor(np.zeros(1))
    rows = [z, -v[2:3], v[1:2],
            v[2:3], z, -v[0:1],
            -v[1:2], v[0:1], z]
    return engine.reshape(engine.concat(rows, axis=0), (3, 3))


def rodrigues(v: Tensor) -> Tensor:
    """Axis-angle (3,) -> rotation matrix (3,3), smooth through zero."""
    t2 = (v * v).sum() + 1e-24
    theta = engine.tsqrt(t2)
    k = _skew(v)
    kk = k @ k
    a = engine.tsin(theta) / theta
    b = (Tensor(1.0) - engine.tcos(theta)) / t2
    eye = Tensor(np.eye(3))
    return eye + engine.reshape(a, (1, 1)) * k + engine.reshape(b, (1, 1)) * kk


class Skeleton:
    """Fixed 24-joint tree; forward kinematics over engine tensors."""

    def __init__(self):
        self.parents = PARENTS
        self.rest_offsets = REST_OFFSETS
        order = []
        seen = {-1}
        while len(order) < N_JOINTS:
            for j in range(N_JOINTS):
                if j not in seen and self.parents[j] in seen:
                    order.append(j)
                    seen.add(j)
        self.topo_order = order

    def forward(self, pose: Tensor, shape: Tensor, translation: Tensor):
        """Returns (joints (24,3) Tensor, world rotations list of (3,3))."""
        joints: list[Tensor | None] = [None] * N_JOINTS
        rots: list[Tensor | None] = [None] * N_JOINTS
        global_scale = shape[0:1]
        for j in self.topo_order:
            r_local = rodrigues(engine.reshape(pose[j], (3,)))
            parent = self.parents[j]
            off = Tensor(self.rest_offsets[j])
            scale = global_scale
            extra = _offset_shape_index(j)
            if extra is not None:
                scale = scale * shape[extra:extra + 1]
            off = off * scale
            if parent < 0:
                joints[j] = off + translation
                rots[j] = r_local
            else:
                moved = engine.reshape(rots[parent] @ engine.reshape(off, (3, 1)), (3,))
                joints[j] = joints[parent] + moved
                rots[j] = rots[parent] @ r_local
        stacked = engine.concat([engine.reshape(joints[j], (1, 3)) for j in range(N_JOINTS)], axis=0)
        return stacked, rots

    def capsules(self, joints: Tensor, shape: Tensor):
        """(starts (C,3), ends (C,3), radii (C,)) as engine tensors."""
        starts = []
        ends = []
        radii = []
        g = shape[0:1]
        for k, child in enumerate(CAPSULE_CHILDREN):
            parent = self.parents[child]
            starts.append(joints[parent:parent + 1])
            ends.append(joints[child:child + 1])
            rscale = g
            extra = _radius_shape_index(int(child))
            if extra is not None:
                rscale = rscale * shape[extra:extra + 1]
            radii.append(Tensor(np.array([CAPSULE_RADII[k]])) * rscale)
        return (engine.concat(starts, axis=0), engine.concat(ends, axis=0),
                engine.concat(radii, axis=0))


def capsule_sdf_points(points: np.ndarray, starts: Tensor, ends: Tensor,
                       radii: Tensor) -> Tensor:
    """Union SDF of capsules at constant query points, differentiable in
    the capsule parameters. Returns (N,) engine tensor."""
    p = Tensor(np.asarray(points, dtype=np.float64)[:, None, :])  # (N,1,3)
    a = engine.reshape(starts, (1,) + starts.shape)
    b = engine.reshape(ends, (1,) + ends.shape)
    ab = b - a
    pa = p - a
    denom = (ab * ab).sum(axis=-1) + 1e-30
    t = engine.clip((pa * ab).sum(axis=-1) / denom, 0.0, 1.0)  # (N,C)
    tn = engine.reshape(t, t.shape + (1,))
    closest = a + tn * ab
    d2 = ((p - closest) ** 2.0).sum(axis=-1)
    dist = engine.tsqrt(d2 + 1e-18) - engine.reshape(radii, (1, radii.shape[0]))
    return engine.tmin(dist, axis=1)


def capsule_union_sdf_grid(starts: np.ndarray, ends: np.ndarray,
                           radii: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    """Fast numpy union SDF on a voxel grid, per-capsule local boxes only."""
    nx, ny, nz = grid.resolution
    out = np.full((nx, ny, nz), np.inf)
    axes = [grid.axis_centers(a) for a in range(3)]
    cell = grid.cell_size
    for a, b, r in zip(starts, ends, radii):
        lo = np.minimum(a, b) - r - 2.5 * cell
        hi = np.maximum(a, b) + r + 2.5 * cell
        sl = []
        for ax in range(3):
            i0 = int(np.searchsorted(axes[ax], lo[ax]))
            i1 = int(np.searchsorted(axes[ax], hi[ax]))
            if i0 >= i1:
                sl = None
                break
            sl.append(slice(i0, i1))
        if sl is None:
            continue
        gx, gy, gz = np.meshgrid(axes[0][sl[0]], axes[1][sl[1]], axes[2][sl[2]],
                                 indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1)
        ab = b - a
        t = np.clip(((pts - a) @ ab) / max(float(ab @ ab), 1e-30), 0.0, 1.0)
        closest = a + t[..., None] * ab
        d = np.linalg.norm(pts - closest, axis=-1) - r
        region = out[sl[0], sl[1], sl[2]]
        np.minimum(region, d, out=region)
    # cells no capsule box touched are far outside; any large value works
    np.minimum(out, 10.0, out=out)
    return out


@dataclass
class BodyBuild:
    """One meshed body: geometry plus the crossing metadata needed to
    rebuild vertex positions differentiably at fixed topology."""

    mesh: TriMesh
    joints: np.ndarray
    capsule_starts: np.ndarray
    capsule_ends: np.ndarray
    capsule_radii: np.ndarray
    crossing_p0: np.ndarray  # (V,3) lattice point positions
    crossing_p1: np.ndarray
    grid_resolution: int


_SKELETON = Skeleton()


def skeleton() -> Skeleton:
    return _SKELETON


def build_body(params: BodyParams, resolution: int = 64) -> BodyBuild:
    """Pose the capsules and mesh their union SDF via marching cubes.

    The mesh is a single watertight surface (capsules overlap at joints).
    Differentiability w.r.t. parameters is available through
    `body_vertex_graph`, which recomputes vertex positions at this build's
    topology from engine tensors.
    """
    params.validate()
    with engine.no_grad():
        joints_t, _ = _SKELETON.forward(Tensor(params.pose), Tensor(params.shape),
                                        Tensor(params.translation))
        a_t, b_t, r_t = _SKELETON.capsules(joints_t, Tensor(params.shape))
    joints = joints_t.data
    a, b, r = a_t.data, b_t.data, r_t.data
    grid = VoxelGrid((resolution,) * 3)
    sdf = capsule_union_sdf_grid(a, b, r, grid)
    grid.values = -sdf  # occupancy-style: positive inside
    mesh, lattice, axis = marching_cubes(grid, 0.0, return_crossings=True)
    if mesh.is_empty:
        raise ValueError("body mesh is empty; parameters out of volume")
    cell = grid.cell_size
    p0 = grid.lo + (lattice + 0.5) * cell
    p1 = p0.copy()
    p1[np.arange(len(p1)), axis] += cell[axis]
    return BodyBuild(mesh=mesh, joints=joints, capsule_starts=a, capsule_ends=b,
                     capsule_radii=r, crossing_p0=p0, crossing_p1=p1,
                     grid_resolution=resolution)


def body_vertex_graph(pose: Tensor, shape: Tensor, translation: Tensor,
                      build: BodyBuild) -> tuple[Tensor, Tensor]:
    """Differentiable (vertices, joints) at the fixed topology of `build`.

    Vertex positions are re-derived as the SDF zero crossing between each
    vertex's two lattice points, so gradients flow pose/shape/translation
    -> capsule frames -> SDF values -> crossing positions.
    """
    joints, _ = _SKELETON.forward(pose, shape, translation)
    a, b, r = _SKELETON.capsules(joints, shape)
    d0 = capsule_sdf_points(build.crossing_p0, a, b, r)
    d1 = capsule_sdf_points(build.crossing_p1, a, b, r)
    t = engine.clip(d0 / (d0 - d1), 0.0, 1.0)  # zero crossing parameter
    p0 = Tensor(build.crossing_p0)
    p1 = Tensor(build.crossing_p1)
    tn = engine.reshape(t, (t.shape[0], 1))
    verts = p0 + tn * (p1 - p0)
    return verts, joints


def render_body_soft(starts: Tensor, ends: Tensor, radii: Tensor, cam,
                     render_size: int = 64, tau_px: float = 0.35,
                     tau_depth: float = 0.02, back: bool = False):
    """Differentiable capsule render under the weak-perspective camera.

    Returns (soft silhouette (h,w), soft normal map (h,w,3)) as engine
    tensors. Coverage is a sigmoid of the 2-D signed distance to each
    capsule's projected stadium; normals use the swept-sphere surface at
    the xy-nearest axis point; capsules composite with soft depth weights
    (nearest z for the front side, farthest for the back).
    """
    h = w = render_size
    # a render pixel (i,j) is the block mean of f x f camera pixels, so its
    # center sits at camera coords f*j + (f-1)/2 (not f*j)
    f = cam.width / render_size
    sx = cam.scale / f
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64), indexing="xy")
    px = (f * us + (f - 1.0) / 2.0 - cam.cx) / cam.scale
    py = -(f * vs + (f - 1.0) / 2.0 - cam.cy) / cam.scale
    p2 = np.stack([px, py], axis=-1).reshape(-1, 1, 2)  # (HW,1,2)

    n_caps = starts.shape[0]
    a2 = engine.reshape(starts[:, 0:2], (1, n_caps, 2))
    b2 = engine.reshape(ends[:, 0:2], (1, n_caps, 2))
    az = engine.reshape(starts[:, 2:3], (1, n_caps))
    bz = engine.reshape(ends[:, 2:3], (1, n_caps))
    r = engine.reshape(radii, (1, n_caps))
    p2t = Tensor(p2)
    ab = b2 - a2
    pa = p2t - a2
    denom = (ab * ab).sum(axis=-1) + 1e-30
    t = engine.clip((pa * ab).sum(axis=-1) / denom, 0.0, 1.0)  # (HW,C)
    tn = engine.reshape(t, t.shape + (1,))
    c2 = a2 + tn * ab
    dvec = p2t - c2
    rho2 = (dvec * dvec).sum(axis=-1)
    rho = engine.tsqrt(rho2 + 1e-18)
    sdf2d = rho - r                                    # world units
    cov = engine.sigmoid(sdf2d * Tensor(-sx / tau_px))  # (HW,C)

    # soft union: 1 - prod(1 - cov)
    log_miss = engine.tlog(engine.clip(Tensor(1.0) - cov, 1e-300, 1.0))
    sil = Tensor(1.0) - engine.texp(log_miss.sum(axis=1))  # (HW,)

    # swept-sphere hit height and normal
    cz = az + engine.reshape(t, t.shape) * (bz - az)
    lift = engine.tsqrt(engine.clip(r * r - rho2, 0.0, None) + 1e-18)
    zhit = cz + lift if not back else cz - lift
    nz = lift if not back else -lift
    inv_r = (r + 1e-30) ** -1.0
    n0 = dvec[:, :, 0] * inv_r
    n1 = dvec[:, :, 1] * inv_r
    n2c = nz * inv_r
    # depth-softmax composite restricted to covering capsules
    sign = 1.0 if not back else -1.0
    zs = zhit * Tensor(sign / tau_depth)
    zs = zs - Tensor(zs.data.max(axis=1, keepdims=True))  # stabilizing const
    wgt = cov * engine.texp(zs)
    norm = wgt.sum(axis=1, keepdims=True) + 1e-12
    wn = wgt / norm
    nx = (wn * n0).sum(axis=1)
    ny = (wn * n1).sum(axis=1)
    nzc = (wn * n2c).sum(axis=1)
    nmap = engine.concat([engine.reshape(nx, (-1, 1)), engine.reshape(ny, (-1, 1)),
                          engine.reshape(nzc, (-1, 1))], axis=1)
    length = engine.tsqrt((nmap * nmap).sum(axis=1, keepdims=True) + 1e-12)
    nmap = nmap / length
    sil_img = engine.reshape(sil, (h, w))
    n_img = engine.reshape(nmap, (h, w, 3))
    return sil_img, n_img


def _resize_to(img: np.ndarray, size: int) -> np.ndarray:
    """Block-average a square image down to (size, size[, C])."""
    h = img.shape[0]
    if h == size:
        return img
    f = h // size
    if img.ndim == 2:
        return img.reshape(size, f, size, f).mean(axis=(1, 3))
    return img.reshape(size, f, size, f, img.shape[2]).mean(axis=(1, 3))


def fit_loss(pose: Tensor, shape: Tensor, trans: Tensor, targets: dict,
             cam, lambda_n: float, render_size: int) -> Tensor:
    """Silhouette L1 plus weighted normal-map MSE (front and back)."""
    joints, _ = _SKELETON.forward(pose, shape, trans)
    a, b, r = _SKELETON.capsules(joints, shape)
    sil, nf = render_body_soft(a, b, r, cam, render_size)
    loss = engine.tabs(sil - Tensor(targets["mask"])).mean()
    if lambda_n > 0.0:
        m = Tensor(targets["mask"][..., None])
        diff_f = nf * m - Tensor(targets["normal_front"])
        ln = (diff_f * diff_f).sum(axis=-1).mean()
        if "normal_back" in targets:
            _, nb = render_body_soft(a, b, r, cam, render_size, back=True)
            diff_b = nb * m - Tensor(targets["normal_back"])
            ln = (ln + (diff_b * diff_b).sum(axis=-1).mean()) * 0.5
        loss = loss + ln * lambda_n
    return loss


def optimize_body_params(init: BodyParams, target_normals: dict,
                         target_mask: np.ndarray, cam, lambda_n: float = 1.0,
                         iters: int = 120, render_size: int = 64,
                         verbose: bool = False):
    """Recover (pose, shape, translation) from a mask and normal maps.

    Preconditioned gradient descent with backtracking: steps are accepted
    only when the loss strictly decreases, so the loss trace is monotone
    and ground-truth initializations stay put. Returns (params, trace).
    """
    mask = _resize_to(np.asarray(target_mask, dtype=np.float64), render_size)
    targets = {"mask": mask}
    if target_normals:
        targets["normal_front"] = _resize_to(
            np.asarray(target_normals["front"], dtype=np.float64), render_size)
        if "back" in target_normals:
            targets["normal_back"] = _resize_to(
                np.asarray(target_normals["back"], dtype=np.float64), render_size)

    pose = Tensor(init.pose.copy(), requires_grad=True)
    shape = Tensor(init.shape.copy(), requires_grad=True)
    trans = Tensor(init.translation.copy(), requires_grad=True)
    groups = [(pose, 0.3), (shape, 0.1), (trans, 1.0)]

    def current() -> Tensor:
        return fit_loss(pose, shape, trans, targets, cam, lambda_n, render_size)

    loss = current()
    trace = [loss.item()]
    if not np.isfinite(trace[0]):
        raise FloatingPointError("non-finite fitting loss at start")
    eta = 0.05
    best = (trace[0], pose.data.copy(), shape.data.copy(), trans.data.copy())
    # steps must beat the current loss by a relative margin or they are
    # rejected: marginal chipping at the soft-render bias floor would
    # otherwise walk parameters away from an already-correct initialization
    rel_improve = 5e-3
    for _ in range(iters):
        for p, _s in groups:
            p.grad = None
        loss.backward()
        grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                 for p, _s in groups]
        gmax = max(float(np.abs(g).max()) for g in grads)
        if gmax < 1e-12:
            break
        saved = [p.data.copy() for p, _s in groups]
        accepted = False
        while eta >= 1e-6:
            for (p, scale), g, s0 in zip(groups, grads, saved):
                p.data = s0 - eta * scale * g
            shape.data = np.clip(shape.data, 0.5, 2.0)
            with engine.no_grad():
                trial = current().item()
            if np.isfinite(trial) and trial < trace[-1] * (1.0 - rel_improve):
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            for (p, _s), s0 in zip(groups, saved):
                p.data = s0
            break
        trace.append(trial)
        if trial < best[0]:
            best = (trial, pose.data.copy(), shape.data.copy(), trans.data.copy())
        eta = min(eta * 1.4, 0.2)
        loss = current()
        if verbose:
            print(f"fit loss {trial:.6f} eta {eta:.4f}")
    result = BodyParams(best[1], best[2], best[3])
    return result, trace


def left_arm_mask(build: BodyBuild, margin: float = 0.02) -> np.ndarray:
    """Vertices within reach of the left-arm capsules (for region tests)."""
    sel = [k for k, child in enumerate(CAPSULE_CHILDREN) if int(child) in _ARM_CHAIN]
    v = build.mesh.vertices
    near = np.zeros(len(v), dtype=bool)
    for k in sel:
        a = build.capsule_starts[k]
        b = build.capsule_ends[k]
        r = build.capsule_radii[k]
        ab = b - a
        t = np.clip(((v - a) @ ab) / max(float(ab @ ab), 1e-30), 0.0, 1.0)
        d = np.linalg.norm(v - (a + t[:, None] * ab), axis=1)
        near |= d < r + margin
    return near
