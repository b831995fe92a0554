"""Rigid poses, triangle meshes, point clouds and convex polytopes.

Hulls in 2 to 6 dimensions are delegated to Qhull (through scipy) on
coordinates normalized to the unit bounding box; the affine rank is checked
beforehand so that flat inputs raise :class:`DegenerateInput` instead of
being silently projected.
"""

from __future__ import annotations

import math
from functools import cached_property
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import ConvexHull, QhullError

from .errors import CapExceeded, DegenerateInput, DimensionMismatch

ORTHO_TOL = 1e-9
RANK_TOL = 1e-9
DEFAULT_MINKOWSKI_CAP = 10**6

# Poses and depths are snapped to this lattice (mm) so that vertical offsets
# such as the drop height are exact in binary floating point.
LATTICE = 2.0**-32


def snap(x):
    return np.round(np.asarray(x, dtype=float) / LATTICE) * LATTICE


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def rotation_error(R: np.ndarray) -> float:
    return float(np.max(np.abs(R.T @ R - np.eye(3))))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform x -> R x + t (millimetres)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        err = rotation_error(R)
        if err > 1e-6 or np.linalg.det(R) < 0:
            raise ValueError(f"rotation is not a proper orthonormal matrix (error {err:.3g})")
        if err > ORTHO_TOL:
            R = orthonormalize(R)
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def inverse(self) -> "Pose":
        return invert(self)

    def to_dict(self) -> dict:
        return {
            "rotation": [[float(v) for v in row] for row in self.rotation],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["rotation"], dtype=float), np.array(d["translation"], dtype=float))

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying ``b`` first, then ``a``."""
    R = a.rotation @ b.rotation
    if rotation_error(R) > ORTHO_TOL:
        R = orthonormalize(R)
    return Pose(R, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation)


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def rotation_taking(a, b) -> np.ndarray:
    """Minimal rotation mapping unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, float) / np.linalg.norm(a)
    b = np.asarray(b, float) / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    s = float(np.linalg.norm(v))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: half-turn about any axis orthogonal to a
        ref = np.array([1.0, 0, 0]) if abs(a[0]) < 0.9 else np.array([0, 1.0, 0])
        return axis_angle(np.cross(a, ref), math.pi)
    return axis_angle(v, math.atan2(s, c))


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, radians."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, c))))


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        F = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(F) and (F.min() < 0 or F.max() >= len(V)):
            raise ValueError("triangle index out of range")
        areas = 0.5 * np.linalg.norm(np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]]), axis=1)
        if np.any(areas < 1e-12):
            raise ValueError(f"{int(np.sum(areas < 1e-12))} triangle(s) with zero area")
        object.__setattr__(self, "vertices", _readonly(V))
        object.__setattr__(self, "triangles", _readonly(F, np.int64))

    @property
    def corners(self) -> np.ndarray:
        """(m, 3, 3) triangle corner coordinates."""
        return self.vertices[self.triangles]

    @property
    def face_normals(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]

    @property
    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        F = self.triangles
        e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
        return _readonly(np.unique(np.sort(e, axis=1), axis=0), np.int64)

    def is_watertight(self) -> bool:
        F = self.triangles
        e = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def volume(self) -> float:
        c = self.corners
        return float(np.sum(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2]))) / 6.0)

    def center_of_mass(self) -> np.ndarray:
        """Uniform-density solid centroid; area-weighted centroid for open meshes."""
        c = self.corners
        vols = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])) / 6.0
        total = vols.sum()
        if self.is_watertight() and abs(total) > 1e-12:
            return (vols[:, None] * c.sum(axis=1) / 4.0).sum(axis=0) / total
        a = self.areas
        return (a[:, None] * c.mean(axis=1)).sum(axis=0) / a.sum()

    def transformed(self, pose: Pose) -> "TriMesh":
        # rigid motions keep triangle areas, so the validation pass is skipped
        out = object.__new__(TriMesh)
        object.__setattr__(out, "vertices", _readonly(pose.apply(self.vertices)))
        object.__setattr__(out, "triangles", self.triangles)
        if "edges" in self.__dict__:
            out.__dict__["edges"] = self.__dict__["edges"]
        return out

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(P)):
            raise ValueError("point cloud contains non-finite values")
        object.__setattr__(self, "points", _readonly(P))

    def __len__(self):
        return len(self.points)

    def transformed(self, pose: Pose) -> "PointCloud":
        return PointCloud(pose.apply(self.points))


@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    """Full-dimensional convex polytope with both representations.

    ``normals[i] . x <= offsets[i]`` for every halfspace; normals are unit.
    """

    dimension: int
    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        d = int(self.dimension)
        V = np.asarray(self.vertices, dtype=float).reshape(-1, d)
        A = np.asarray(self.normals, dtype=float).reshape(-1, d)
        b = np.asarray(self.offsets, dtype=float).reshape(-1)
        if len(A) != len(b):
            raise ValueError("normals and offsets differ in length")
        object.__setattr__(self, "dimension", d)
        object.__setattr__(self, "vertices", _readonly(V))
        object.__setattr__(self, "normals", _readonly(A))
        object.__setattr__(self, "offsets", _readonly(b))

    @property
    def halfspaces(self) -> list[tuple[np.ndarray, float]]:
        return [(n, float(o)) for n, o in zip(self.normals, self.offsets)]

    def contains(self, x, tol: float = 0.0) -> bool:
        return contains(self, x, tol)

    def boundary_distance(self, x) -> float:
        return boundary_distance(self, x)


def affine_rank(points: np.ndarray, tol: float = RANK_TOL) -> int:
    P = np.asarray(points, dtype=float)
    if len(P) <= 1:
        return 0
    Q = P - P.mean(axis=0)
    s = np.linalg.svd(Q, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * max(s[0], 1.0)))


def _normalizer(P: np.ndarray):
    lo = P.min(axis=0)
    span = P.max(axis=0) - lo
    span[span == 0.0] = 1.0
    return lo, span


def convex_hull(points, d: int | None = None) -> ConvexPolytope:
    """Convex hull in ``d`` dimensions (1 <= d), vertex and halfspace form."""
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    if d is None:
        d = P.shape[1]
    if P.shape[1] != d:
        raise DimensionMismatch(f"points have dimension {P.shape[1]}, expected {d}")
    if len(P) < d + 1:
        raise DegenerateInput(f"{len(P)} points cannot span {d} dimensions")
    lo, span = _normalizer(P)
    Pn = (P - lo) / span
    if affine_rank(Pn) < d:
        raise DegenerateInput(f"points are affinely dependent in {d} dimensions")
    if d == 1:
        i_min, i_max = int(np.argmin(P[:, 0])), int(np.argmax(P[:, 0]))
        return ConvexPolytope(1, P[[i_min, i_max]], [[-1.0], [1.0]], [-P[i_min, 0], P[i_max, 0]])
    try:
        hull = ConvexHull(Pn, qhull_options="Qt")
    except QhullError as exc:
        raise DegenerateInput(str(exc).splitlines()[0]) from exc
    vertices = P[hull.vertices]
    # n_norm . (x - lo)/span + c <= 0   ->   (n_norm/span) . x <= -c + (n_norm/span) . lo
    A = hull.equations[:, :-1] / span
    b = -hull.equations[:, -1] + A @ lo
    norms = np.linalg.norm(A, axis=1)
    A = A / norms[:, None]
    b = b / norms
    A, b = _dedupe_halfspaces(A, b, float(np.max(np.abs(P))) + 1.0)
    return ConvexPolytope(d, vertices, A, b)


def _dedupe_halfspaces(A, b, scale):
    key = np.round(np.hstack([A, (b / scale)[:, None]]), 9)
    _, idx = np.unique(key, axis=0, return_index=True)
    idx = np.sort(idx)
    return A[idx], b[idx]


def extreme_points(points, tol: float = RANK_TOL) -> np.ndarray:
    """Vertices of the convex hull of ``points`` within their own affine hull."""
    P = np.asarray(points, dtype=float)
    if len(P) > 1:
        _, keep = np.unique(np.round(P, 12), axis=0, return_index=True)
        P = P[np.sort(keep)]
    if len(P) <= 2:
        return P
    lo, span = _normalizer(P)
    Pn = (P - lo) / span
    c = Pn.mean(axis=0)
    _, s, Vt = np.linalg.svd(Pn - c, full_matrices=False)
    if s[0] == 0.0:
        return P[:1]
    r = int(np.sum(s > tol * max(s[0], 1.0)))
    Q = (Pn - c) @ Vt[:r].T
    if r == 1:
        return P[[int(np.argmin(Q[:, 0])), int(np.argmax(Q[:, 0]))]]
    try:
        hull = ConvexHull(Q, qhull_options="Qt")
    except QhullError:
        return P
    return P[np.sort(hull.vertices)]


def minkowski_hull(point_sets: Sequence[np.ndarray], cap: int = DEFAULT_MINKOWSKI_CAP) -> np.ndarray:
    """Extreme points of the Minkowski sum of finite point sets.

    Folds left, pruning to extreme points after each pairwise sum; the result
    equals the extreme points of the full vertex-tuple enumeration.
    """
    sets = [np.asarray(s, dtype=float) for s in point_sets]
    if not sets:
        raise ValueError("need at least one point set")
    dims = {s.shape[1] for s in sets}
    if len(dims) != 1:
        raise DimensionMismatch(f"point sets of mixed dimension {sorted(dims)}")
    product = 1
    for s in sets:
        product *= len(s)
        if product > cap:
            raise CapExceeded(f"vertex product exceeds cap {cap}")
    acc = extreme_points(sets[0])
    for s in sets[1:]:
        acc = extreme_points((acc[:, None, :] + extreme_points(s)[None, :, :]).reshape(-1, acc.shape[1]))
    return acc


def minkowski_sum(polys: Sequence[ConvexPolytope], cap: int = DEFAULT_MINKOWSKI_CAP) -> ConvexPolytope:
    if not polys:
        raise ValueError("need at least one polytope")
    d = polys[0].dimension
    if any(p.dimension != d for p in polys):
        raise DimensionMismatch("polytopes differ in dimension")
    if len(polys) == 1:
        return polys[0]
    return convex_hull(minkowski_hull([p.vertices for p in polys], cap), d)


def _check_dim(poly: ConvexPolytope, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != poly.dimension:
        raise DimensionMismatch(f"point has dimension {x.shape[0]}, polytope {poly.dimension}")
    return x


def contains(poly: ConvexPolytope, x, tol: float = 0.0) -> bool:
    """Closed-set membership: every halfspace satisfied up to ``tol``."""
    x = _check_dim(poly, x)
    return bool(np.all(poly.normals @ x <= poly.offsets + tol))


def boundary_distance(poly: ConvexPolytope, x) -> float:
    """Signed distance to the boundary: positive inside, negative outside."""
    x = _check_dim(poly, x)
    slack = poly.offsets - poly.normals @ x
    if np.all(slack >= 0):
        return float(slack.min())
    return -_distance_outside(poly, x)


def _distance_outside(poly: ConvexPolytope, x: np.ndarray) -> float:
    d = poly.dimension
    if d == 1:
        lo, hi = poly.vertices[:, 0].min(), poly.vertices[:, 0].max()
        return float(max(lo - x[0], x[0] - hi, 0.0))
    if d == 2:
        return _polygon_distance(order_ccw(poly.vertices), x)
    # project onto the polytope: min |y - x|^2 s.t. A y <= b
    A, b = poly.normals, poly.offsets
    y0 = poly.vertices.mean(axis=0)
    res = minimize(
        lambda y: 0.5 * np.sum((y - x) ** 2),
        y0,
        jac=lambda y: y - x,
        constraints=[{"type": "ineq", "fun": lambda y: b - A @ y, "jac": lambda y: -A}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    return float(np.linalg.norm(res.x - x))


def order_ccw(vertices_2d) -> np.ndarray:
    V = np.asarray(vertices_2d, dtype=float)
    c = V.mean(axis=0)
    ang = np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0])
    return V[np.argsort(ang, kind="stable")]


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.linalg.norm(p - (a + t * ab)))


def _polygon_distance(poly_ccw: np.ndarray, x: np.ndarray) -> float:
    n = len(poly_ccw)
    return min(point_segment_distance(x, poly_ccw[i], poly_ccw[(i + 1) % n]) for i in range(n))


def polygon_signed_distance(vertices_2d, p) -> float:
    """Signed distance from ``p`` to a possibly degenerate 2-D convex polygon.

    Positive strictly inside a proper polygon; a point or segment has no
    interior so the result is minus the Euclidean distance (zero on it).
    """
    V = np.asarray(vertices_2d, dtype=float).reshape(-1, 2)
    p = np.asarray(p, dtype=float)
    if len(V) == 1:
        return -float(np.linalg.norm(p - V[0]))
    if len(V) == 2:
        return -point_segment_distance(p, V[0], V[1])
    return boundary_distance(convex_hull(V, 2), p)


def hull_2d(points) -> np.ndarray:
    """CCW extreme points of a planar point set; 1 or 2 points when degenerate."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    E = extreme_points(P)
    if len(E) <= 2:
        return E
    return order_ccw(E)


def points_in_triangle_2d(p: np.ndarray, a, b, c, tol: float = 0.0) -> np.ndarray:
    """Mask of 2-D points inside triangle abc (either orientation), closed."""
    p = np.atleast_2d(p)

    def cross(o, u, v):
        return (u[0] - o[0]) * (v[..., 1] - o[1]) - (u[1] - o[1]) * (v[..., 0] - o[0])

    d1, d2, d3 = cross(a, b, p), cross(b, c, p), cross(c, a, p)
    has_neg = (d1 < -tol) | (d2 < -tol) | (d3 < -tol)
    has_pos = (d1 > tol) | (d2 > tol) | (d3 > tol)
    return ~(has_neg & has_pos)


def as_points(seq: Iterable) -> np.ndarray:
    return np.asarray(list(seq), dtype=float)
