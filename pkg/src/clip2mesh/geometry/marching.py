"""Vectorized marching cubes over voxel-center lattices.

Crossing vertices are deduplicated through global lattice-edge ids, so the
output is watertight whenever the iso-surface closes inside the grid.
Faces are wound so normals point toward lower field values (outside, for
occupancy fields).
"""

from __future__ import annotations

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .mesh import TriMesh, empty_mesh
from .voxel import VoxelGrid

# crossing parameter clamp: keeps every emitted vertex strictly inside its
# lattice edge so sliver faces stay above the degeneracy threshold
_T_CLAMP = 1e-3


def marching_cubes(grid: VoxelGrid, iso: float = 0.5,
                   return_crossings: bool = False):
    """Extract the iso-surface of grid.values as a triangle mesh.

    With `return_crossings`, also returns (lattice_index (V,3), axis (V,))
    describing the lattice edge each vertex interpolates along.
    """
    if grid.values is None:
        raise ValueError("grid has no values")
    vals = grid.values
    if not np.all(np.isfinite(vals)):
        raise ValueError("grid values must be finite")
    nx, ny, nz = grid.resolution

    # exact-iso samples get a one-sided nudge (in difference space, so the
    # result is invariant to shifting field and iso by the same constant)
    diff = vals - iso
    diff = np.where(np.abs(diff) < 1e-12, 1e-12, diff)

    inside = diff < 0.0  # bit convention of the standard tables
    cube_index = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        sl = inside[ox:ox + nx - 1, oy:oy + ny - 1, oz:oz + nz - 1]
        cube_index |= sl.astype(np.int64) << bit

    active = np.nonzero(EDGE_TABLE[cube_index] != 0)
    if len(active[0]) == 0:
        if return_crossings:
            return empty_mesh(), np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64)
        return empty_mesh()
    ci = cube_index[active]  # (M,)
    base = np.stack(active, axis=1)  # (M,3) cell origins in lattice coords

    # global lattice-edge ids for the 12 cube edges of each active cell:
    # id = axis * n_points + linear index of the edge's lower lattice point
    n_points = nx * ny * nz
    edge_axis = np.zeros(12, dtype=np.int64)
    edge_origin = np.zeros((12, 3), dtype=np.int64)
    for e in range(12):
        c0, c1 = EDGE_CORNERS[e]
        o0, o1 = CORNER_OFFSETS[c0], CORNER_OFFSETS[c1]
        d = o1 - o0
        if d.sum() < 0:  # orient each edge toward +axis
            o0 = o1
            d = -d
        edge_axis[e] = int(np.argmax(d))
        edge_origin[e] = o0
    pts = base[:, None, :] + edge_origin[None, :, :]  # (M,12,3)
    lin = (pts[..., 0] * ny + pts[..., 1]) * nz + pts[..., 2]
    edge_ids = edge_axis[None, :] * n_points + lin  # (M,12)

    # assemble faces of global edge ids from the triangle table
    rows = TRI_TABLE[ci]  # (M,16)
    faces_global = []
    for k in range(0, 15, 3):
        m = rows[:, k] >= 0
        if not m.any():
            continue
        local = rows[m, k:k + 3]  # (Mk,3) local edge numbers
        gids = np.take_along_axis(edge_ids[m], local, axis=1)
        faces_global.append(gids)
    faces_global = np.concatenate(faces_global, axis=0)

    used, inv = np.unique(faces_global.reshape(-1), return_inverse=True)
    faces = inv.reshape(-1, 3)

    # vertex positions: linear interpolation of the crossing along each edge
    axis = used // n_points
    pidx = used % n_points
    iz = pidx % nz
    iy = (pidx // nz) % ny
    ix = pidx // (nz * ny)
    cell = grid.cell_size
    p0 = np.stack([grid.lo[0] + (ix + 0.5) * cell[0],
                   grid.lo[1] + (iy + 0.5) * cell[1],
                   grid.lo[2] + (iz + 0.5) * cell[2]], axis=1)
    d0 = diff[ix, iy, iz]
    step = np.zeros((len(used), 3), dtype=np.int64)
    step[np.arange(len(used)), axis] = 1
    d1 = diff[ix + step[:, 0], iy + step[:, 1], iz + step[:, 2]]
    t = np.clip(d0 / (d0 - d1), _T_CLAMP, 1.0 - _T_CLAMP)
    verts = p0.copy()
    verts[np.arange(len(used)), axis] += t * cell[axis]

    # the standard tables (bit set when value < iso) already wind so face
    # normals point toward the below-iso half: the outside, for occupancy
    mesh = TriMesh(verts, faces)
    if return_crossings:
        return mesh, np.stack([ix, iy, iz], axis=1), axis
    return mesh
