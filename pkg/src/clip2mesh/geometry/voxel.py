"""Axis-aligned voxel grids over the reconstruction volume."""

from __future__ import annotations

import numpy as np

DEFAULT_BOUNDS = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))


class VoxelGrid:
    """Scalar samples at voxel centers of a box: center(i) = lo + (i+0.5)*(hi-lo)/n."""

    def __init__(self, resolution, lo=None, hi=None, values: np.ndarray | None = None):
        self.resolution = tuple(int(n) for n in resolution)
        if any(n < 2 for n in self.resolution):
            raise ValueError("resolution must be >= 2 per axis")
        self.lo = np.array(DEFAULT_BOUNDS[0] if lo is None else lo, dtype=np.float64)
        self.hi = np.array(DEFAULT_BOUNDS[1] if hi is None else hi, dtype=np.float64)
        if np.any(self.hi <= self.lo):
            raise ValueError("degenerate bounds")
        if values is not None:
            values = np.asarray(values, dtype=np.float64)
            if values.shape != self.resolution:
                raise ValueError("values shape must match resolution")
        self.values = values

    @property
    def cell_size(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.resolution)

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.resolution[axis]
        return self.lo[axis] + (np.arange(n) + 0.5) * (self.hi[axis] - self.lo[axis]) / n

    def centers(self) -> np.ndarray:
        """All voxel centers as an (nx,ny,nz,3) array."""
        xs, ys, zs = (self.axis_centers(a) for a in range(3))
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def centers_flat(self) -> np.ndarray:
        return self.centers().reshape(-1, 3)
