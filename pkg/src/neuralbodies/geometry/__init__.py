"""Ground-truth geometry: meshes, ray casting, mascons and direction sampling."""

from .mascons import MasconModel, lattice, load_mascons, mesh_to_mascons, save_mascons
from .mesh import TriangleMesh, empty_mesh, load_obj, make_cube, make_icosphere, save_obj
from .raycast import (Hit, Ray, chord_length, point_inside, points_inside, ray_mesh_chords,
                      ray_triangle_intersect)
from .sampling import fibonacci_directions, random_unit_vectors, uniform_in_ball, uniform_in_shell

__all__ = [
    "Hit", "MasconModel", "Ray", "TriangleMesh", "chord_length", "empty_mesh", "fibonacci_directions",
    "lattice", "load_mascons", "load_obj", "make_cube", "make_icosphere", "mesh_to_mascons",
    "point_inside", "points_inside", "random_unit_vectors", "ray_mesh_chords",
    "ray_triangle_intersect", "save_mascons", "save_obj", "uniform_in_ball", "uniform_in_shell",
]
