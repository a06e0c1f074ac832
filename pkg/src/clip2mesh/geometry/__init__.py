"""Non-learned 3-D machinery: meshes, distance fields, cameras, marching
cubes, rasterization, and image formats."""

from .camera import Camera, bilinear_sample, visibility
from .distance import (InsideTester, MeshDistanceField, parity_inside_reference,
                       point_triangle_barycentric, point_triangle_distance)
from .images import load_png, load_sttf, save_png, save_sttf
from .marching import marching_cubes
from .mesh import TriMesh, empty_mesh, load_obj, load_ply, save_obj, save_ply
from .raster import (decode_normal_map, encode_normal_map, rasterize,
                     render_channels, render_shaded)
from .voxel import DEFAULT_BOUNDS, VoxelGrid

__all__ = [
    "Camera", "bilinear_sample", "visibility",
    "InsideTester", "MeshDistanceField", "parity_inside_reference",
    "point_triangle_barycentric", "point_triangle_distance",
    "load_png", "load_sttf", "save_png", "save_sttf",
    "marching_cubes",
    "TriMesh", "empty_mesh", "load_obj", "load_ply", "save_obj", "save_ply",
    "decode_normal_map", "encode_normal_map", "rasterize", "render_channels",
    "render_shaded",
    "DEFAULT_BOUNDS", "VoxelGrid",
]
