"""Reference meshes and the object table used in the drop experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import TriMesh


def convex_mesh(points) -> TriMesh:
    """Outward-oriented triangulated convex hull of 3-D points."""
    P = np.asarray(points, dtype=float)
    hull = ConvexHull(P)
    V = P[hull.vertices]
    remap = {int(old): new for new, old in enumerate(hull.vertices)}
    F = np.array([[remap[int(i)] for i in s] for s in hull.simplices], dtype=np.int64)
    centroid = V.mean(axis=0)
    c = V[F]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    flip = np.einsum("ij,ij->i", n, c[:, 0] - centroid) < 0
    F[flip] = F[flip][:, ::-1]
    return TriMesh(V, F)


def box(w: float, l: float, h: float, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box, ``w`` along x, ``l`` along y, ``h`` along z."""
    hx, hy, hz = w / 2, l / 2, h / 2
    V = np.array(
        [[sx * hx, sy * hy, sz * hz] for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)],
        dtype=float,
    ) + np.asarray(center, dtype=float)
    F = np.array(
        [
            [0, 2, 1], [1, 2, 3],  # bottom
            [4, 5, 6], [5, 7, 6],  # top
            [0, 1, 4], [1, 5, 4],  # -y
            [2, 6, 3], [3, 6, 7],  # +y
            [0, 4, 2], [2, 4, 6],  # -x
            [1, 3, 5], [3, 7, 5],  # +x
        ]
    )
    return TriMesh(V, F)


def cube(side: float) -> TriMesh:
    return box(side, side, side)


def cylinder(diameter: float, height: float, segments: int = 24) -> TriMesh:
    """Prism approximating a cylinder; axis along z, centered at the origin."""
    r = diameter / 2
    ang = 2 * math.pi * np.arange(segments) / segments
    ring = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    bottom = np.hstack([ring, np.full((segments, 1), -height / 2)])
    top = np.hstack([ring, np.full((segments, 1), height / 2)])
    V = np.vstack([bottom, top, [[0, 0, -height / 2], [0, 0, height / 2]]])
    cb, ct = 2 * segments, 2 * segments + 1
    F = []
    for i in range(segments):
        j = (i + 1) % segments
        F += [[i, j, segments + j], [i, segments + j, segments + i]]
        F += [[cb, j, i], [ct, segments + i, segments + j]]
    return TriMesh(V, np.array(F))


def sphere(radius: float, n: int = 400, extra_points=None) -> TriMesh:
    """Fibonacci-lattice sphere hull; ``extra_points`` (on the sphere) are added as vertices."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = math.pi * (1 + 5**0.5) * i
    P = radius * np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    if extra_points is not None:
        E = np.asarray(extra_points, dtype=float).reshape(-1, 3)
        # drop lattice points crowding the requested vertices
        d = np.linalg.norm(P[:, None, :] - E[None, :, :], axis=2)
        P = np.vstack([P[d.min(axis=1) > 0.5 * radius * math.sqrt(4 * math.pi / n)], E])
    return convex_mesh(P)


@dataclass(frozen=True)
class TableObject:
    object_id: str
    kind: str
    mass_g: float
    dims_mm: tuple[float, float, float]  # W x L x H
    round_part: bool

    def mesh(self) -> TriMesh:
        w, l, h = self.dims_mm
        if self.kind == "Shaft":
            return cylinder(w, h)
        if self.round_part:
            return cylinder(w, h)
        return box(w, l, h)


TARGET_OBJECTS: dict[str, TableObject] = {
    o.object_id: o
    for o in [
        TableObject("a", "Sprocket", 106, (48, 48, 18), True),
        TableObject("b", "Bearing Holder", 119, (54, 54, 30), True),
        TableObject("c", "Timing Pulley", 19, (32, 32, 20), True),
        TableObject("d", "Terminal Block", 12, (23, 39, 20), False),
        TableObject("e", "L-Bracket for Motor", 75, (25, 70, 60), False),
        TableObject("f", "Idler Pulley", 32, (42, 42, 10), True),
        TableObject("g", "Shaft", 45, (10, 10, 75), True),
        TableObject("h", "Geared DC Motor", 190, (37, 82, 37), False),
        TableObject("i", "Round Belt Pulley", 84, (62, 62, 20), True),
        TableObject("j", "Small L-Bracket", 14, (20, 30, 30), False),
    ]
}


def shaft() -> TriMesh:
    return TARGET_OBJECTS["g"].mesh()


def builtin_mesh(name: str) -> TriMesh:
    """``shaft``, ``cube40``, ``sphere<d>`` or a table object id ``a``..``j``."""
    if name in TARGET_OBJECTS:
        return TARGET_OBJECTS[name].mesh()
    if name == "shaft":
        return shaft()
    if name.startswith("cube"):
        return cube(float(name[4:] or 40))
    if name.startswith("sphere"):
        return sphere(float(name[6:] or 30) / 2)
    raise ValueError(f"unknown builtin mesh '{name}'")
