"""Triangular-pyramid cavity, jig surface and the stamp tool that presses it.

The cavity is the first octant of the stamping frame ``C_f`` (origin at the
apex, axes along the three cavity edges, pointing up and out) cut by the rim
plane ``z = surface_height``.  Face ``i`` is the plane spanned by the two
other axes, so its inward normal (into the void, towards a placed part) is
axis ``i`` itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Sequence, Union

import numpy as np

from .errors import CavityOutOfBounds, InfeasibleOrientation
from .geometry import (
    Pose,
    PointCloud,
    TriMesh,
    compose,
    invert,
    order_ccw,
    points_in_triangle_2d,
    rot_z,
    snap,
)

RIM = 3  # face id of the flat membrane surrounding the cavity
EQUAL_ANGLE_ELEVATION = math.asin(1 / math.sqrt(3))  # axis vs horizontal plane
EQUAL_ANGLE_POLAR = math.acos(1 / math.sqrt(3))  # axis vs vertical, ~54.74 deg


@dataclass(frozen=True)
class JigSpec:
    surface_height: float = 0.0
    jig_thickness: float = 40.0
    membrane_friction: float = 1.97
    lateral_extent: float = 60.0

    def __post_init__(self):
        if self.jig_thickness <= 0:
            raise ValueError("jig_thickness must be positive")
        if self.membrane_friction < 0:
            raise ValueError("membrane_friction must be non-negative")
        if self.lateral_extent <= 0:
            raise ValueError("lateral_extent must be positive")


@dataclass(frozen=True)
class EqualAngle:
    """All three cavity edges equally inclined (cube-corner pose)."""


@dataclass(frozen=True)
class ExplicitAngles:
    """Elevation of each cavity edge above the horizontal plane, degrees."""

    angles: tuple[float, float, float]

    def __init__(self, a: float, b: float | None = None, c: float | None = None):
        vals = tuple(a) if b is None else (a, b, c)
        object.__setattr__(self, "angles", tuple(float(v) for v in vals))


Orientation = Union[EqualAngle, ExplicitAngles]


def edge_elevations(mode: Orientation) -> np.ndarray:
    """Sines of the edge elevations; they must square-sum to one."""
    if isinstance(mode, EqualAngle):
        return np.full(3, 1 / math.sqrt(3))
    ang = np.radians(mode.angles)
    if len(ang) != 3 or np.any(ang <= 0) or np.any(ang >= math.pi / 2):
        raise InfeasibleOrientation(f"edge elevations must lie in (0, 90) degrees, got {mode.angles}")
    s = np.sin(ang)
    total = float(np.sum(s**2))
    if abs(total - 1.0) > 1e-6:
        raise InfeasibleOrientation(
            f"edge elevations {mode.angles} deg give sum of squared sines {total:.6g}; "
            "an orthonormal frame requires exactly 1"
        )
    return s / math.sqrt(total)


def _frame_rotation(s: np.ndarray) -> np.ndarray:
    """Rotation whose columns are the edge axes, with third row ``s``."""
    u = np.asarray(s, dtype=float)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(u @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    r1 = ref - (ref @ u) * u
    r1 /= np.linalg.norm(r1)
    r2 = np.cross(u, r1)
    return np.vstack([r1, r2, u])


@dataclass(frozen=True, eq=False)
class CavitySpec:
    depth: float
    apex: np.ndarray
    frame: Pose
    rim: np.ndarray  # (3, 3); rim[i] lies on edge axis i
    fillet_radius: float = 2.0
    yaw: float = 0.0
    rim_z: float = field(init=False)

    def __post_init__(self):
        apex = np.array(self.apex, dtype=float)
        rim = np.array(self.rim, dtype=float).reshape(3, 3)
        apex.setflags(write=False)
        rim.setflags(write=False)
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "rim", rim)
        object.__setattr__(self, "rim_z", float(apex[2] + self.depth))

    @property
    def axes(self) -> np.ndarray:
        """Edge directions as rows (world frame)."""
        return self.frame.rotation.T

    @property
    def face_normals(self) -> np.ndarray:
        """Inward unit normals of faces 0..2 as rows."""
        return self.frame.rotation.T

    @property
    def face_offsets(self) -> np.ndarray:
        return self.face_normals @ self.apex

    @property
    def faces(self) -> list[tuple[np.ndarray, float]]:
        return [(n, float(o)) for n, o in zip(self.face_normals, self.face_offsets)]

    def face_triangle(self, i: int) -> np.ndarray:
        j, k = [x for x in range(3) if x != i]
        return np.array([self.apex, self.rim[j], self.rim[k]])

    def face_coordinates(self, points) -> np.ndarray:
        """Signed distance of points to each face plane (positive = cavity side)."""
        return (np.atleast_2d(points) - self.apex) @ self.face_normals.T

    def plane_heights(self, xy) -> np.ndarray:
        xy = np.atleast_2d(xy)
        n = self.face_normals
        d = xy - self.apex[:2]
        return self.apex[2] - (d @ n[:, :2].T) / n[:, 2]

    def terrain_height(self, xy) -> np.ndarray:
        """Height of the jig surface (cavity floor or flat membrane)."""
        return np.minimum(self.rim_z, self.plane_heights(xy).max(axis=1))

    def in_rim_triangle(self, xy, tol: float = 0.0) -> np.ndarray:
        r = self.rim
        return points_in_triangle_2d(np.atleast_2d(xy), r[0, :2], r[1, :2], r[2, :2], tol)

    def rotated_about_z(self, angle: float, center=(0.0, 0.0)) -> "CavitySpec":
        """Same cavity rotated about a vertical axis through ``center``."""
        c = np.array([center[0], center[1], 0.0])
        Rz = rot_z(angle)
        return replace(
            self,
            apex=Rz @ (self.apex - c) + c,
            frame=Pose(Rz @ self.frame.rotation, Rz @ (self.frame.translation - c) + c),
            rim=(self.rim - c) @ Rz.T + c,
            yaw=self.yaw + angle,
        )

    def rim_area(self) -> float:
        r = self.rim
        return 0.5 * float(np.linalg.norm(np.cross(r[1] - r[0], r[2] - r[0])))

    def to_dict(self) -> dict:
        return {
            "depth": float(self.depth),
            "apex": [float(v) for v in self.apex],
            "frame": self.frame.to_dict(),
            "rim": [[float(v) for v in row] for row in self.rim],
            "fillet_radius": float(self.fillet_radius),
        }


def build_cavity(
    depth: float,
    apex_xy: Sequence[float] = (0.0, 0.0),
    orientation: Orientation | None = None,
    fillet_radius: float = 2.0,
    jig: JigSpec | None = None,
    yaw: float = 0.0,
) -> CavitySpec:
    jig = jig or JigSpec()
    orientation = orientation or EqualAngle()
    if not (0 < depth <= jig.jig_thickness):
        raise ValueError(f"depth {depth} outside (0, {jig.jig_thickness}]")
    if fillet_radius < 0:
        raise ValueError("fillet_radius must be non-negative")
    s = edge_elevations(orientation)
    R = rot_z(yaw) @ _frame_rotation(s)
    apex = np.array([apex_xy[0], apex_xy[1], jig.surface_height - depth], dtype=float)
    axes = R.T
    rim = apex + (depth / axes[:, 2])[:, None] * axes
    rim[:, 2] = jig.surface_height
    if np.any(np.hypot(rim[:, 0], rim[:, 1]) > jig.lateral_extent + 1e-9):
        raise CavityOutOfBounds(
            f"cavity rim reaches {np.hypot(rim[:, 0], rim[:, 1]).max():.2f} mm, "
            f"beyond the usable radius {jig.lateral_extent} mm"
        )
    return CavitySpec(depth=float(depth), apex=apex, frame=Pose(R, apex), rim=rim, fillet_radius=float(fillet_radius), yaw=yaw)


def stamp_transform(cavity: CavitySpec, object_source: Pose) -> Pose:
    """Transform from the stamp's source frame to the stamping frame."""
    return compose(invert(object_source), cavity.frame)


# -- jig surface clearance ---------------------------------------------------


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def vertical_clearance(cavity: CavitySpec, mesh: TriMesh) -> float:
    """Smallest vertical gap between a posed mesh and the jig surface.

    Negative when the mesh penetrates.  Besides mesh vertices this checks the
    convex features of the surface: mesh edges crossing the rim ridge and
    rim corners lying under mesh facets.
    """
    V = mesh.vertices
    gaps = [V[:, 2] - cavity.terrain_height(V[:, :2])]
    E = mesh.edges
    P0, P1 = V[E[:, 0]], V[E[:, 1]]
    d = P1[:, :2] - P0[:, :2]
    for i in range(3):
        r0, r1 = cavity.rim[i], cavity.rim[(i + 1) % 3]
        r = r1[:2] - r0[:2]
        denom = _cross2(d, r[None, :])
        ok = np.abs(denom) > 1e-12
        w = r0[:2] - P0[:, :2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = _cross2(w, r[None, :]) / denom
            u = _cross2(w, d) / denom
        hit = ok & (s >= 0) & (s <= 1) & (u >= 0) & (u <= 1)
        if hit.any():
            z = P0[hit, 2] + s[hit] * (P1[hit, 2] - P0[hit, 2])
            gaps.append(z - cavity.rim_z)
    C = mesh.corners
    for corner in cavity.rim:
        z = heights_under(C, corner[:2])
        if len(z):
            gaps.append(z - cavity.rim_z)
    return float(min(g.min() for g in gaps if len(g)))


def heights_under(corners: np.ndarray, xy, tol: float = 1e-12) -> np.ndarray:
    """Heights of the triangles (m, 3, 3) at ``xy`` among those covering it."""
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    ok = np.abs(det) > tol
    det = np.where(ok, det, 1.0)
    px, py = xy[0] - a[:, 0], xy[1] - a[:, 1]
    l1 = (px * (c[:, 1] - a[:, 1]) - py * (c[:, 0] - a[:, 0])) / det
    l2 = (py * (b[:, 0] - a[:, 0]) - px * (b[:, 1] - a[:, 1])) / det
    eps = 1e-12
    hit = ok & (l1 >= -eps) & (l2 >= -eps) & (l1 + l2 <= 1 + eps)
    return (a[:, 2] + l1 * (b[:, 2] - a[:, 2]) + l2 * (c[:, 2] - a[:, 2]))[hit]


def covering_triangles(corners: np.ndarray, xy) -> np.ndarray:
    """Indices of triangles whose vertical projection contains ``xy``."""
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    ok = np.abs(det) > 1e-12
    det = np.where(ok, det, 1.0)
    px, py = xy[0] - a[:, 0], xy[1] - a[:, 1]
    l1 = (px * (c[:, 1] - a[:, 1]) - py * (c[:, 0] - a[:, 0])) / det
    l2 = (py * (b[:, 0] - a[:, 0]) - px * (b[:, 1] - a[:, 1])) / det
    eps = 1e-12
    return np.nonzero(ok & (l1 >= -eps) & (l2 >= -eps) & (l1 + l2 <= 1 + eps))[0]


# -- stamp tool --------------------------------------------------------------


def _stamp_planes(cavity: CavitySpec):
    """Outward planes (normal, offset, tag) bounding the pressing pyramid."""
    n_in = cavity.face_normals
    apex = cavity.apex
    planes = [(-n_in[i], float(-n_in[i] @ apex), f"face{i}") for i in range(3)]
    planes.append((np.array([0.0, 0.0, 1.0]), cavity.rim_z, "top"))
    r = cavity.fillet_radius
    if r > 0:
        for i, j in combinations(range(3), 2):
            a, b = -n_in[i], -n_in[j]
            alpha = math.acos(max(-1.0, min(1.0, float(a @ b))))
            m = (a + b) / np.linalg.norm(a + b)
            # chamfer strip of width r across a dihedral with normal angle alpha
            setback = r / (2 * math.tan(alpha / 2))
            planes.append((m, float(m @ apex) - setback, f"edge{i}{j}"))
        m = -n_in.sum(axis=0)
        m /= np.linalg.norm(m)
        planes.append((m, float(m @ apex) - r, "apex"))
    return planes


def _polytope_vertices(planes, tol=1e-9):
    N = np.array([p[0] for p in planes])
    b = np.array([p[1] for p in planes])
    pts = []
    for trip in combinations(range(len(planes)), 3):
        A = N[list(trip)]
        if abs(np.linalg.det(A)) < 1e-10:
            continue
        x = np.linalg.solve(A, b[list(trip)])
        if np.all(N @ x <= b + tol * (1 + np.abs(b))):
            pts.append(x)
    pts = np.array(pts)
    keep = []
    for p in pts:
        if not any(np.linalg.norm(p - q) < 1e-7 for q in keep):
            keep.append(p)
    return np.array(keep)


def _ordered_face(V, idx, normal):
    P = V[idx]
    u = np.cross(normal, [1.0, 0, 0] if abs(normal[0]) < 0.9 else [0, 1.0, 0])
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    c = P.mean(axis=0)
    ang = np.arctan2((P - c) @ v, (P - c) @ u)
    return [idx[k] for k in np.argsort(ang, kind="stable")]


def _zip_rings(outer, inner, V):
    """Triangulate the annulus between two nested CCW rings (normal +z)."""
    c = V[inner].mean(axis=0)

    def angles(ring):
        a = np.arctan2(V[ring, 1] - c[1], V[ring, 0] - c[0])
        return a

    ao, ai = angles(outer), angles(inner)
    start = ao[0]
    ao = np.unwrap(np.append(ao, ao[0]) - start)
    ao[-1] = ao[0] + 2 * math.pi if ao[-1] <= ao[0] else ao[-1]
    b0 = int(np.argmin(np.abs((ai - start + math.pi) % (2 * math.pi) - math.pi)))
    inner = list(inner[b0:]) + list(inner[:b0])
    ai = np.unwrap(np.append(angles(np.array(inner)), ai[b0]) - start)
    ai[-1] = ai[0] + 2 * math.pi
    tris = []
    a = b = 0
    no, ni = len(outer), len(inner)
    while a < no or b < ni:
        if b >= ni or (a < no and ao[a + 1] <= ai[b + 1]):
            tris.append([outer[a], outer[(a + 1) % no], inner[b % ni]])
            a += 1
        else:
            tris.append([outer[a % no], inner[(b + 1) % ni], inner[b % ni]])
            b += 1
    out = []
    for t in tris:
        p = V[t]
        nz = np.cross(p[1] - p[0], p[2] - p[0])[2]
        out.append(t if nz > 0 else [t[0], t[2], t[1]])
    return out


def build_stamp_tool(
    cavity: CavitySpec,
    handle_length: float = 30.0,
    handle_radius: float = 5.0,
    handle_sides: int = 6,
) -> TriMesh:
    """Watertight pressing pyramid (cavity mirror) with a prismatic handle.

    The mesh is expressed in the jig frame at full press: the pyramid fills
    the cavity and the handle rises from the rim plane.
    """
    planes = _stamp_planes(cavity)
    V = _polytope_vertices(planes)
    verts = [v for v in V]
    tris = []
    top_ring = None
    for normal, offset, tag in planes:
        on = [i for i, v in enumerate(V) if abs(normal @ v - offset) < 1e-7 * (1 + abs(offset))]
        if len(on) < 3:
            continue
        ring = _ordered_face(V, on, normal)
        if tag == "top":
            top_ring = ring
            if handle_length > 0:
                continue
        for k in range(1, len(ring) - 1):
            tris.append([ring[0], ring[k], ring[k + 1]])
    if handle_length > 0:
        top = np.array(top_ring)
        centroid = V[top].mean(axis=0)
        ang = 2 * math.pi * np.arange(handle_sides) / handle_sides + cavity.yaw
        hexa = np.stack(
            [centroid[0] + handle_radius * np.cos(ang), centroid[1] + handle_radius * np.sin(ang), np.full(handle_sides, cavity.rim_z)],
            axis=1,
        )
        poly = order_ccw(V[top, :2])
        for k in range(len(poly)):
            e = poly[(k + 1) % len(poly)] - poly[k]
            side = _cross2(e[None, :], hexa[:, :2] - poly[k])
            if np.any(side <= 1e-6):
                raise ValueError(f"handle radius {handle_radius} mm does not fit inside the stamp base")
        base = len(verts)
        verts += list(hexa)
        verts += list(hexa + [0.0, 0.0, handle_length])
        Vall = np.array(verts)
        ring_bottom = np.arange(base, base + handle_sides)
        ring_top = ring_bottom + handle_sides
        tris += _zip_rings(np.array(top_ring), ring_bottom, Vall)
        for k in range(handle_sides):
            k2 = (k + 1) % handle_sides
            tris.append([ring_bottom[k], ring_bottom[k2], ring_top[k2]])
            tris.append([ring_bottom[k], ring_top[k2], ring_top[k]])
        for k in range(1, handle_sides - 1):
            tris.append([ring_top[0], ring_top[k], ring_top[k + 1]])
    Vall = np.array(verts)
    F = np.array(tris, dtype=np.int64)
    # orient every facet away from the solid's interior
    inner = Vall[: len(V)].mean(axis=0)
    c = Vall[F]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    handle_face = np.any(F >= len(V), axis=1)
    ref = np.where(handle_face[:, None], c.mean(axis=1) * 0, inner)
    out_dir = c.mean(axis=1) - ref
    if handle_length > 0:
        axis_pt = np.array([Vall[len(V):, 0].mean(), Vall[len(V):, 1].mean(), 0.0])
        hd = c.mean(axis=1) - axis_pt
        hd[:, 2] = np.where(np.abs(n[:, 2]) > np.linalg.norm(n[:, :2], axis=1), n[:, 2], 0.0)
        top_like = np.abs(n[:, 2]) > np.linalg.norm(n[:, :2], axis=1)
        hd[top_like, :2] = 0.0
        hd[top_like, 2] = 1.0
        out_dir = np.where(handle_face[:, None], hd, out_dir)
    flip = np.einsum("ij,ij->i", n, out_dir) < 0
    F[flip] = F[flip][:, ::-1]
    return TriMesh(Vall, F)


# -- point clouds ------------------------------------------------------------


def _sample_triangle(a, b, c, spacing):
    longest = max(np.linalg.norm(b - a), np.linalg.norm(c - a), np.linalg.norm(c - b))
    n = max(1, int(math.ceil(longest / spacing - 1e-12)))
    pts = [a + (i / n) * (b - a) + (j / n) * (c - a) for i in range(n + 1) for j in range(n + 1 - i)]
    return np.array(pts)


def _unique_rows(P, decimals=9):
    _, idx = np.unique(np.round(P, decimals), axis=0, return_index=True)
    return P[np.sort(idx)]


def cavity_point_cloud(cavity: CavitySpec, spacing: float) -> PointCloud:
    """Points on the three cavity faces at a pitch no larger than ``spacing``."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    pts = np.vstack([_sample_triangle(*cavity.face_triangle(i), spacing) for i in range(3)])
    return PointCloud(_unique_rows(pts))


def filleted_cavity_cloud(cavity: CavitySpec, spacing: float) -> PointCloud:
    """Cavity surface as actually pressed by the chamfered stamp."""
    tool = build_stamp_tool(cavity, handle_length=0.0)
    pts = [
        _sample_triangle(*tri, spacing)
        for tri, n in zip(tool.corners, tool.face_normals)
        if n[2] < -1e-9
    ]
    return PointCloud(_unique_rows(np.vstack(pts)))


def snapped_depth(depth: float) -> float:
    return float(snap(depth))
