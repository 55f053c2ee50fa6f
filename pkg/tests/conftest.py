from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from meshwarp.mesh import BodyMesh, SymmetricPartMap
from meshwarp.raster import Camera


@pytest.fixture
def regular_tetrahedron() -> BodyMesh:
    """All four faces equilateral and pairwise adjacent; every centroid
    distance equal, so neighbor ordering is decided purely by tie-breaks."""
    verts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    faces = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])
    return BodyMesh(verts, faces, np.ones(4, dtype=int), {1: "body"})


@pytest.fixture
def strip_mesh() -> BodyMesh:
    """Six-face planar triangle strip; shortest paths are hop chains."""
    verts = np.array([[x, y, 0.0] for x in range(4) for y in (0.0, 1.0)])
    faces = np.array([
        [0, 1, 2], [1, 3, 2],
        [2, 3, 4], [3, 5, 4],
        [4, 5, 6], [5, 7, 6],
    ])
    labels = np.array([1, 1, 2, 2, 3, 3])
    return BodyMesh(verts, faces, labels, {1: "a", 2: "b", 3: "c"})


@pytest.fixture
def two_part_sym() -> SymmetricPartMap:
    return SymmetricPartMap({1: 2, 2: 1, 3: 3})


@pytest.fixture
def frontal_camera() -> Camera:
    return Camera(fx=64.0, fy=64.0, cx=16.0, cy=16.0,
                  R=np.eye(3), t=np.zeros(3), width=32, height=32)


def soup_scene(rng: np.random.Generator, n_tri: int, *, depth=(2.0, 5.5), spread=1.2):
    """Random triangle soup fully in front of an identity camera."""
    centers = rng.uniform([-spread, -spread, depth[0]], [spread, spread, depth[1]],
                          (n_tri, 3))
    offsets = rng.normal(scale=0.45, size=(n_tri, 3, 3))
    verts = (centers[:, None, :] + offsets).reshape(-1, 3)
    verts[:, 2] = np.clip(verts[:, 2], 0.5, None)
    faces = np.arange(3 * n_tri, dtype=np.int32).reshape(-1, 3)
    return verts, faces
