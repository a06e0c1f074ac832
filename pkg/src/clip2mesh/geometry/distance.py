"""Point-to-mesh distance queries: exact closest points, a BVH accelerator,
angle-weighted pseudonormal signs, and ray-parity inside tests."""

from __future__ import annotations

import numpy as np
from numba import njit

from .mesh import TriMesh


@njit(cache=True)
def _closest_on_triangle(a, b, c, p, out):
    """Closest point on triangle abc to p (Ericson's region walk).

    Writes the closest point into `out` and returns barycentric (u,v,w)
    with respect to (a,b,c).
    """
    ab0 = b[0] - a[0]; ab1 = b[1] - a[1]; ab2 = b[2] - a[2]
    ac0 = c[0] - a[0]; ac1 = c[1] - a[1]; ac2 = c[2] - a[2]
    ap0 = p[0] - a[0]; ap1 = p[1] - a[1]; ap2 = p[2] - a[2]
    d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    if d1 <= 0.0 and d2 <= 0.0:
        out[0], out[1], out[2] = a[0], a[1], a[2]
        return 1.0, 0.0, 0.0
    bp0 = p[0] - b[0]; bp1 = p[1] - b[1]; bp2 = p[2] - b[2]
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    if d3 >= 0.0 and d4 <= d3:
        out[0], out[1], out[2] = b[0], b[1], b[2]
        return 0.0, 1.0, 0.0
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        t = d1 / (d1 - d3)
        out[0] = a[0] + t * ab0; out[1] = a[1] + t * ab1; out[2] = a[2] + t * ab2
        return 1.0 - t, t, 0.0
    cp0 = p[0] - c[0]; cp1 = p[1] - c[1]; cp2 = p[2] - c[2]
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    if d6 >= 0.0 and d5 <= d6:
        out[0], out[1], out[2] = c[0], c[1], c[2]
        return 0.0, 0.0, 1.0
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        t = d2 / (d2 - d6)
        out[0] = a[0] + t * ac0; out[1] = a[1] + t * ac1; out[2] = a[2] + t * ac2
        return 1.0 - t, 0.0, t
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[0] = b[0] + t * (c[0] - b[0])
        out[1] = b[1] + t * (c[1] - b[1])
        out[2] = b[2] + t * (c[2] - b[2])
        return 0.0, 1.0 - t, t
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    out[0] = a[0] + ab0 * v + ac0 * w
    out[1] = a[1] + ab1 * v + ac1 * w
    out[2] = a[2] + ab2 * v + ac2 * w
    return 1.0 - v - w, v, w


def point_triangle_distance(p, tri) -> tuple[float, np.ndarray]:
    """Distance from a point to one triangle and the closest point on it."""
    tri = np.asarray(tri, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    area2 = np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    if area2 <= 2e-12:
        raise ValueError("degenerate triangle")
    out = np.zeros(3)
    _closest_on_triangle(tri[0], tri[1], tri[2], p, out)
    return float(np.linalg.norm(p - out)), out


def point_triangle_barycentric(p, tri) -> np.ndarray:
    """Barycentric coordinates of the closest point (sum to 1, each >= 0)."""
    tri = np.asarray(tri, dtype=np.float64)
    out = np.zeros(3)
    u, v, w = _closest_on_triangle(tri[0], tri[1], tri[2],
                                   np.asarray(p, dtype=np.float64), out)
    return np.array([u, v, w])


@njit(cache=True)
def _brute_closest(points, verts, faces, out_d2, out_pt, out_face, out_bary):
    tmp = np.zeros(3)
    for i in range(points.shape[0]):
        best = 1e300
        for f in range(faces.shape[0]):
            u, v, w = _closest_on_triangle(verts[faces[f, 0]], verts[faces[f, 1]],
                                           verts[faces[f, 2]], points[i], tmp)
            dx = points[i, 0] - tmp[0]
            dy = points[i, 1] - tmp[1]
            dz = points[i, 2] - tmp[2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best:
                best = d2
                out_pt[i, 0], out_pt[i, 1], out_pt[i, 2] = tmp[0], tmp[1], tmp[2]
                out_face[i] = f
                out_bary[i, 0], out_bary[i, 1], out_bary[i, 2] = u, v, w
        out_d2[i] = best


@njit(cache=True)
def _aabb_dist2(p, lo, hi):
    d2 = 0.0
    for k in range(3):
        d = 0.0
        if p[k] < lo[k]:
            d = lo[k] - p[k]
        elif p[k] > hi[k]:
            d = p[k] - hi[k]
        d2 += d * d
    return d2


@njit(cache=True)
def _bvh_closest(points, verts, faces, perm, nlo, nhi, nleft, nright,
                 nstart, ncount, out_d2, out_pt, out_face, out_bary):
    stack = np.empty(128, dtype=np.int64)
    tmp = np.zeros(3)
    for i in range(points.shape[0]):
        p = points[i]
        best = 1e300
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            ni = stack[top]
            if _aabb_dist2(p, nlo[ni], nhi[ni]) >= best:
                continue
            if nleft[ni] < 0:
                for k in range(nstart[ni], nstart[ni] + ncount[ni]):
                    f = perm[k]
                    u, v, w = _closest_on_triangle(verts[faces[f, 0]], verts[faces[f, 1]],
                                                   verts[faces[f, 2]], p, tmp)
                    dx = p[0] - tmp[0]; dy = p[1] - tmp[1]; dz = p[2] - tmp[2]
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best:
                        best = d2
                        out_pt[i, 0], out_pt[i, 1], out_pt[i, 2] = tmp[0], tmp[1], tmp[2]
                        out_face[i] = f
                        out_bary[i, 0], out_bary[i, 1], out_bary[i, 2] = u, v, w
            else:
                l = nleft[ni]; r = nright[ni]
                dl = _aabb_dist2(p, nlo[l], nhi[l])
                dr = _aabb_dist2(p, nlo[r], nhi[r])
                if dl < dr:  # push farther first so nearer pops first
                    if dr < best:
                        stack[top] = r; top += 1
                    if dl < best:
                        stack[top] = l; top += 1
                else:
                    if dl < best:
                        stack[top] = l; top += 1
                    if dr < best:
                        stack[top] = r; top += 1
        out_d2[i] = best


def _build_bvh(verts: np.ndarray, faces: np.ndarray, leaf_size: int = 8):
    """Median-split BVH over face centroids; leaves hold contiguous ranges
    of the returned face permutation."""
    f_lo = verts[faces].min(axis=1)
    f_hi = verts[faces].max(axis=1)
    centroids = verts[faces].mean(axis=1)
    n_faces = len(faces)
    perm = np.arange(n_faces)
    nodes_lo, nodes_hi, left, right, start, count = [], [], [], [], [], []

    def new_node():
        nodes_lo.append(np.zeros(3)); nodes_hi.append(np.zeros(3))
        left.append(-1); right.append(-1); start.append(0); count.append(0)
        return len(left) - 1

    root = new_node()
    # iterative split: (node index, lo slice, hi slice) over perm
    work = [(root, 0, n_faces)]
    while work:
        ni, s, e = work.pop()
        idx = perm[s:e]
        nodes_lo[ni] = f_lo[idx].min(axis=0)
        nodes_hi[ni] = f_hi[idx].max(axis=0)
        if e - s <= leaf_size:
            start[ni] = s
            count[ni] = e - s
            continue
        cen = centroids[idx]
        axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
        order = np.argsort(cen[:, axis], kind="stable")
        perm[s:e] = idx[order]
        mid = s + (e - s) // 2
        li, ri = new_node(), new_node()
        left[ni], right[ni] = li, ri
        work.append((li, s, mid))
        work.append((ri, mid, e))
    return (perm.astype(np.int64), np.array(nodes_lo), np.array(nodes_hi),
            np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
            np.array(start, dtype=np.int64), np.array(count, dtype=np.int64))


_BARY_TOL = 1e-9


class MeshDistanceField:
    """Signed distance queries against one immutable mesh.

    Sign is negative inside, positive outside, decided by the
    angle-weighted pseudonormal of the closest feature (face, edge, or
    vertex), which is robust where the nearest point is not on a face
    interior. `sign_reliable` is False for non-watertight meshes, where
    magnitudes are still exact but the inside test is not meaningful.
    """

    def __init__(self, mesh: TriMesh):
        if mesh.is_empty:
            raise ValueError("distance field needs a non-empty mesh")
        self.mesh = mesh
        self.sign_reliable = mesh.is_watertight()
        (self.perm, self.nlo, self.nhi, self.nleft, self.nright,
         self.nstart, self.ncount) = _build_bvh(mesh.vertices, mesh.faces)
        # feature pseudonormals: face normals, summed normals per edge and
        # angle-weighted sums per vertex
        edges = np.sort(np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                                        mesh.faces[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        self.edge_ids = inv.reshape(3, -1).T.copy()  # (F,3): local edges 01,12,20
        self.edge_normals = np.zeros((len(uniq), 3))
        for le in range(3):
            np.add.at(self.edge_normals, self.edge_ids[:, le], mesh.face_normals)
        self.vertex_pseudo = mesh.vertex_normals

    def query(self, points: np.ndarray):
        """(N,3) points -> (signed distance, closest point, closest face)."""
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        n = len(points)
        d2 = np.zeros(n)
        pt = np.zeros((n, 3))
        fi = np.zeros(n, dtype=np.int64)
        bary = np.zeros((n, 3))
        _bvh_closest(points, self.mesh.vertices, self.mesh.faces, self.perm,
                     self.nlo, self.nhi, self.nleft, self.nright,
                     self.nstart, self.ncount, d2, pt, fi, bary)
        dist = np.sqrt(d2)
        signed = dist * self._signs(points, pt, fi, bary)
        return signed, pt, fi

    def query_brute(self, points: np.ndarray):
        """Brute-force reference path over all faces (oracle for the BVH)."""
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        n = len(points)
        d2 = np.zeros(n)
        pt = np.zeros((n, 3))
        fi = np.zeros(n, dtype=np.int64)
        bary = np.zeros((n, 3))
        _brute_closest(points, self.mesh.vertices, self.mesh.faces, d2, pt, fi, bary)
        dist = np.sqrt(d2)
        signed = dist * self._signs(points, pt, fi, bary)
        return signed, pt, fi

    def _signs(self, points, closest, face_idx, bary):
        pseudo = np.empty((len(points), 3))
        inner = bary > _BARY_TOL
        n_inner = inner.sum(axis=1)
        faces = self.mesh.faces[face_idx]
        # face interior
        m = n_inner == 3
        pseudo[m] = self.mesh.face_normals[face_idx[m]]
        # vertex: the single nonzero barycentric
        m = n_inner == 1
        if m.any():
            vidx = faces[m, np.argmax(bary[m], axis=1)]
            pseudo[m] = self.vertex_pseudo[vidx]
        # edge: the barycentric that vanishes names the opposite local edge
        m = n_inner == 2
        if m.any():
            zero_at = np.argmin(bary[m], axis=1)
            local_edge = np.where(zero_at == 2, 0, np.where(zero_at == 0, 1, 2))
            eids = self.edge_ids[face_idx[m], local_edge]
            pseudo[m] = self.edge_normals[eids]
        s = np.sign(np.sum((points - closest) * pseudo, axis=1))
        s[s == 0.0] = 1.0
        return s


# -- ray parity inside test -----------------------------------------------------

_RAY_EPS = 1e-12
_GRAZE_TOL = 1e-10


@njit(cache=True)
def _ray_hits(p, d, verts, faces, cand, n_cand):
    """Count ray-triangle hits (t > eps); returns (count, grazed flag)."""
    count = 0
    grazed = False
    for k in range(n_cand):
        f = cand[k]
        a = verts[faces[f, 0]]; b = verts[faces[f, 1]]; c = verts[faces[f, 2]]
        e10 = b[0] - a[0]; e11 = b[1] - a[1]; e12 = b[2] - a[2]
        e20 = c[0] - a[0]; e21 = c[1] - a[1]; e22 = c[2] - a[2]
        pv0 = d[1] * e22 - d[2] * e21
        pv1 = d[2] * e20 - d[0] * e22
        pv2 = d[0] * e21 - d[1] * e20
        det = e10 * pv0 + e11 * pv1 + e12 * pv2
        if abs(det) < _RAY_EPS:
            continue
        inv = 1.0 / det
        tv0 = p[0] - a[0]; tv1 = p[1] - a[1]; tv2 = p[2] - a[2]
        u = (tv0 * pv0 + tv1 * pv1 + tv2 * pv2) * inv
        if u < -_GRAZE_TOL or u > 1.0 + _GRAZE_TOL:
            continue
        qv0 = tv1 * e12 - tv2 * e11
        qv1 = tv2 * e10 - tv0 * e12
        qv2 = tv0 * e11 - tv1 * e10
        v = (d[0] * qv0 + d[1] * qv1 + d[2] * qv2) * inv
        if v < -_GRAZE_TOL or u + v > 1.0 + _GRAZE_TOL:
            continue
        t = (e20 * qv0 + e21 * qv1 + e22 * qv2) * inv
        if abs(t) < _GRAZE_TOL:
            grazed = True
            continue
        if t > 0.0:
            if (u < _GRAZE_TOL or v < _GRAZE_TOL or u + v > 1.0 - _GRAZE_TOL):
                grazed = True
            count += 1
    return count, grazed


@njit(cache=True)
def _parity_kernel(points, d, verts, faces, cell_start, cell_faces, gx, gy,
                   lo0, lo1, inv_cell0, inv_cell1, out_inside, out_graze):
    for i in range(points.shape[0]):
        cx = int((points[i, 0] - lo0) * inv_cell0)
        cy = int((points[i, 1] - lo1) * inv_cell1)
        if cx < 0:
            cx = 0
        if cy < 0:
            cy = 0
        if cx >= gx:
            cx = gx - 1
        if cy >= gy:
            cy = gy - 1
        cell = cy * gx + cx
        s = cell_start[cell]
        e = cell_start[cell + 1]
        count, grazed = _ray_hits(points[i], d, verts, faces, cell_faces[s:e], e - s)
        out_inside[i] = count % 2 == 1
        out_graze[i] = grazed


class InsideTester:
    """Odd-parity inside test for a closed mesh using rays along nearly +z.

    Faces are bucketed on an xy grid; a tiny fixed tilt keeps rays off
    axis-aligned geometry. Grazing hits fall back to alternate directions.
    """

    _DIRS = np.array([
        [1.71e-4, 2.93e-4, 1.0],
        [-2.57e-4, 1.13e-4, 1.0],
        [3.31e-4, -1.87e-4, 1.0],
    ])
    _DIRS = _DIRS / np.linalg.norm(_DIRS, axis=1, keepdims=True)

    def __init__(self, mesh: TriMesh, grid: int = 64):
        if mesh.is_empty:
            raise ValueError("inside test needs a non-empty mesh")
        self.mesh = mesh
        lo, hi = mesh.bounds()
        span = np.maximum(hi[:2] - lo[:2], 1e-9)
        self.gx = self.gy = grid
        self.lo = lo[:2] - 1e-6
        self.inv_cell = np.array([self.gx, self.gy]) / (span + 2e-6)
        # candidate margin covers the ray tilt across the volume height
        margin = float((hi[2] - lo[2]) * 5e-4 + 1e-9)
        f_lo = mesh.vertices[mesh.faces].min(axis=1)[:, :2] - margin
        f_hi = mesh.vertices[mesh.faces].max(axis=1)[:, :2] + margin
        c_lo = np.clip(((f_lo - self.lo) * self.inv_cell).astype(np.int64), 0, grid - 1)
        c_hi = np.clip(((f_hi - self.lo) * self.inv_cell).astype(np.int64), 0, grid - 1)
        counts = np.zeros(self.gx * self.gy + 1, dtype=np.int64)
        entries = []
        for f in range(len(mesh.faces)):
            for cy in range(c_lo[f, 1], c_hi[f, 1] + 1):
                for cx in range(c_lo[f, 0], c_hi[f, 0] + 1):
                    entries.append((cy * self.gx + cx, f))
        entries.sort()
        self.cell_faces = np.array([f for _, f in entries], dtype=np.int64)
        for cell, _ in entries:
            counts[cell + 1] += 1
        self.cell_start = np.cumsum(counts)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        n = len(points)
        inside = np.zeros(n, dtype=np.bool_)
        graze = np.zeros(n, dtype=np.bool_)
        _parity_kernel(points, self._DIRS[0], self.mesh.vertices, self.mesh.faces,
                       self.cell_start, self.cell_faces, self.gx, self.gy,
                       self.lo[0], self.lo[1], self.inv_cell[0], self.inv_cell[1],
                       inside, graze)
        if graze.any():
            # grazing rays: brute force over all faces with alternate tilts
            all_faces = np.arange(len(self.mesh.faces), dtype=np.int64)
            for i in np.nonzero(graze)[0]:
                for d in self._DIRS[1:]:
                    cnt, g = _ray_hits(points[i], d, self.mesh.vertices,
                                       self.mesh.faces, all_faces, len(all_faces))
                    if not g:
                        inside[i] = cnt % 2 == 1
                        break
        return inside


def parity_inside_reference(mesh: TriMesh, points: np.ndarray) -> np.ndarray:
    """Independent parity oracle: vectorized numpy crossings along +x.

    Second implementation on purpose (different axis, different algorithm):
    projects to the yz plane and counts positive-side plane crossings.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tilt = np.array([1.0, 3.7e-4, -2.1e-4])
    d = tilt / np.linalg.norm(tilt)
    tri = mesh.vertices[mesh.faces]  # (F,3,3)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = b - a
    e2 = c - a
    pv = np.cross(d, e2)  # constant per face
    det = (e1 * pv).sum(axis=1)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    inside = np.zeros(len(points), dtype=bool)
    for i, p in enumerate(points):
        tv = p - a
        u = (tv * pv).sum(axis=1) * inv
        qv = np.cross(tv, e1)
        v = (qv @ d) * inv
        t = (e2 * qv).sum(axis=1) * inv
        hits = ok & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
        inside[i] = hits.sum() % 2 == 1
    return inside
