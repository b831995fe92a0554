"""Object/cavity contact detection and linearized friction-cone wrench sets.

All wrenches are referenced at the object's centre of mass and torques are
divided by the moment scale ``rho`` so that the six components share units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cavity import RIM, CavitySpec, covering_triangles
from .errors import PenetrationTooDeep
from .geometry import Pose, TriMesh

GRAVITY = 9.81  # N/kg
EZ = np.array([0.0, 0.0, 1.0])


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ContactPoint:
    position: np.ndarray
    normal: np.ndarray  # unit, pointing into the object
    face_id: int  # 0..2 cavity faces, RIM for the flat membrane
    penetration: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise ValueError("contact normal must be non-zero")
        object.__setattr__(self, "position", _frozen(self.position))
        object.__setattr__(self, "normal", _frozen(n / norm))

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "normal": [float(v) for v in self.normal],
            "face_id": int(self.face_id),
            "penetration": float(self.penetration),
        }


@dataclass(frozen=True, eq=False)
class WrenchVector:
    force: np.ndarray  # N
    torque: np.ndarray  # N mm / rho

    def __post_init__(self):
        f, t = _frozen(self.force), _frozen(self.torque)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise ValueError("wrench components must be finite")
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


@dataclass(frozen=True, eq=False)
class WrenchSet:
    contact: ContactPoint
    vertices: list = field(default_factory=list)

    def __post_init__(self):
        if not self.vertices:
            raise ValueError("a wrench set needs at least one vertex")

    @property
    def matrix(self) -> np.ndarray:
        """(k, 6) array of vertex wrenches."""
        return np.array([w.as_array() for w in self.vertices])


# -- detection ---------------------------------------------------------------


def feature_edges(mesh: TriMesh, angle_tol: float = 1e-6) -> np.ndarray:
    """Edges whose adjacent facets are not coplanar (plus boundary edges)."""
    F = mesh.triangles
    n = mesh.face_normals
    e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    owner = np.tile(np.arange(len(F)), 3)
    key = np.sort(e, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    key, owner = key[order], owner[order]
    uniq, start, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    keep = np.ones(len(uniq), dtype=bool)
    two = counts == 2
    a, b = owner[start[two]], owner[start[two] + 1]
    keep[two] = np.einsum("ij,ij->i", n[a], n[b]) < math.cos(angle_tol)
    return uniq[keep]


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _within_rim(cavity: CavitySpec, xy: np.ndarray, tol: float) -> np.ndarray:
    """Points whose projection is inside the rim triangle or within ``tol`` of it."""
    R = cavity.rim[:, :2]
    ccw = _cross2(R[1] - R[0], R[2] - R[0]) > 0
    ok = np.ones(len(xy), dtype=bool)
    for i in range(3):
        a, b = R[i], R[(i + 1) % 3]
        e = b - a
        d = _cross2(e[None, :], xy - a) / np.linalg.norm(e)
        ok &= (d if ccw else -d) >= -tol
    return ok


def _candidates(mesh: TriMesh, V: np.ndarray, cavity: CavitySpec, tol: float):
    """Yield (position, normal, face_id, penetration) in a pose-independent order."""
    out = []
    q = cavity.face_coordinates(V)
    z = V[:, 2]
    rim_z = cavity.rim_z
    below = cavity.terrain_height(V[:, :2]) - z
    deep = below > 10 * tol
    if deep.any():
        raise PenetrationTooDeep(
            f"{int(deep.sum())} vertex(es) up to {below.max():.3f} mm inside the jig (limit {10 * tol:.3f} mm)"
        )
    normals = cavity.face_normals
    inside = _within_rim(cavity, V[:, :2], tol)
    for vi in range(len(V)):
        for i in range(3):
            j, k = [x for x in range(3) if x != i]
            if inside[vi] and abs(q[vi, i]) <= tol and q[vi, j] >= -tol and q[vi, k] >= -tol and z[vi] <= rim_z + tol:
                out.append((V[vi], normals[i], i, -q[vi, i]))
        if abs(z[vi] - rim_z) <= tol and cavity.plane_heights(V[vi, :2])[0].max() >= rim_z - tol:
            out.append((V[vi], EZ, RIM, rim_z - z[vi]))
    # object feature edges resting on the rim ridge
    E = feature_edges(mesh)
    P0, P1 = V[E[:, 0]], V[E[:, 1]]
    d = P1[:, :2] - P0[:, :2]
    for r in range(3):
        r0, r1 = cavity.rim[r], cavity.rim[(r + 1) % 3]
        rd = r1[:2] - r0[:2]
        denom = _cross2(d, rd[None, :])
        ok = np.abs(denom) > 1e-12
        w = r0[:2] - P0[:, :2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = _cross2(w, rd[None, :]) / denom
            u = _cross2(w, d) / denom
        eps = 1e-12
        hit = ok & (s > eps) & (s < 1 - eps) & (u > eps) & (u < 1 - eps)
        for ei in np.nonzero(hit)[0]:
            p = P0[ei] + s[ei] * (P1[ei] - P0[ei])
            if abs(p[2] - rim_z) > tol:
                continue
            n = np.cross(P1[ei] - P0[ei], np.append(rd, 0.0))
            n = n / np.linalg.norm(n)
            if n[2] < 0:
                n = -n
            out.append((p, n, RIM, rim_z - p[2]))
    # rim corners poking into inclined object facets
    C = V[mesh.triangles]
    fn = np.cross(C[:, 1] - C[:, 0], C[:, 2] - C[:, 0])
    fn /= np.linalg.norm(fn, axis=1)[:, None]
    for corner in cavity.rim:
        for t in covering_triangles(C, corner[:2]):
            n = -fn[t]
            # horizontal facets lying on the rim are represented by their own vertices
            if n[2] <= 1e-9 or n[2] >= 1 - 1e-9:
                continue
            a = C[t, 0]
            zt = a[2] - (n[0] * (corner[0] - a[0]) + n[1] * (corner[1] - a[1])) / n[2]
            if abs(zt - rim_z) <= tol:
                out.append((corner.copy(), n, RIM, rim_z - zt))
    return out


def detect_contacts(obj: TriMesh, pose: Pose, cavity: CavitySpec, tol: float = 0.5) -> list[ContactPoint]:
    """Contacts of ``obj`` placed at ``pose`` with the cavity faces and rim."""
    if tol <= 0:
        raise ValueError("contact tolerance must be positive")
    V = pose.apply(obj.vertices)
    cand = _candidates(obj, V, cavity, tol)
    if not cand:
        return []
    # deepest per face first, then greedy suppression of near duplicates
    depth_key = [round(c[3], 9) for c in cand]
    order = sorted(range(len(cand)), key=lambda i: (-depth_key[i], i))
    kept: list[int] = []
    seen_faces = set()
    for i in order:
        if cand[i][2] not in seen_faces:
            seen_faces.add(cand[i][2])
            kept.append(i)
    for i in order:
        if i in kept:
            continue
        p = cand[i][0]
        if all(np.linalg.norm(p - cand[k][0]) > tol for k in kept):
            kept.append(i)
    kept.sort(key=lambda i: (cand[i][2], i))
    return [ContactPoint(cand[i][0], cand[i][1], cand[i][2], float(cand[i][3])) for i in kept]


# -- wrenches ----------------------------------------------------------------


def tangent_basis(contact: ContactPoint, com) -> tuple[np.ndarray, np.ndarray]:
    n = contact.normal
    a = np.cross(EZ, n)
    if np.linalg.norm(a) < 1e-9:
        # vertical normal: anchor the basis on the horizontal lever arm
        a = contact.position - np.asarray(com, dtype=float)
        a = a - (a @ n) * n
        if np.linalg.norm(a) < 1e-9:
            a = np.cross(n, [1.0, 0.0, 0.0])
    a = a / np.linalg.norm(a)
    return a, np.cross(n, a)


def friction_cone(contact: ContactPoint, mu: float, k: int, com, rho: float) -> WrenchSet:
    """Linearized cone of unit contact forces, as COM-referenced wrenches."""
    if mu < 0:
        raise ValueError("friction coefficient must be non-negative")
    if rho <= 0:
        raise ValueError("moment scale must be positive")
    com = np.asarray(com, dtype=float)
    n = contact.normal
    lever = contact.position - com
    if mu == 0:
        forces = n[None, :]
    else:
        if k < 3:
            raise ValueError("a friction cone needs at least 3 edges")
        a, b = tangent_basis(contact, com)
        th = 2 * math.pi * np.arange(k) / k
        t = np.cos(th)[:, None] * a + np.sin(th)[:, None] * b
        forces = n + mu * t
        forces /= np.linalg.norm(forces, axis=1)[:, None]
    torques = np.cross(lever, forces) / rho
    return WrenchSet(contact, [WrenchVector(f, tq) for f, tq in zip(forces, torques)])


def gravity_wrench(mass: float, com=None, rho: float = 1.0, g: float = GRAVITY) -> WrenchVector:
    """Weight of the part, referenced at its own COM (so torque-free)."""
    if mass <= 0:
        raise ValueError("mass must be positive")
    return WrenchVector([0.0, 0.0, -mass * g], np.zeros(3))
