"""Antipodal parallel-jaw grasps and their approach feasibility over a cavity.

The gripper is three boxes (two fingers and a palm) in a frame whose y axis
is the closing direction and whose z axis is the approach direction (the
direction the gripper travels to reach the part).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cavity import CavitySpec, JigSpec
from .geometry import Pose, TriMesh

SAFETY = 0.5  # mm, inflation applied to gripper boxes in environment checks
CONTACT_GAP = 0.1  # mm, finger boxes start this far outside the grasp contacts


@dataclass(frozen=True)
class GripperSpec:
    max_opening: float = 40.0
    finger_width: float = 10.0
    finger_thickness: float = 5.0
    finger_length: float = 30.0
    palm_clearance: float = 2.0
    approach_standoff: float = 20.0
    approach_count: int = 8

    def __post_init__(self):
        dims = (
            self.max_opening,
            self.finger_width,
            self.finger_thickness,
            self.finger_length,
            self.palm_clearance,
            self.approach_standoff,
        )
        if any(not d > 0 for d in dims):
            raise ValueError("gripper dimensions must be positive")
        if self.max_opening <= self.finger_thickness:
            raise ValueError("max_opening must exceed finger_thickness")
        if self.approach_count < 1:
            raise ValueError("approach_count must be at least 1")


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    contact_a: np.ndarray
    contact_b: np.ndarray
    axis: np.ndarray  # closing direction, from a to b
    approach: np.ndarray
    gripper_pose: Pose
    width: float
    approaches: tuple = field(default=())  # all self-collision-free approach directions

    def transformed(self, pose: Pose) -> "GraspCandidate":
        R = pose.rotation
        return GraspCandidate(
            pose.apply(self.contact_a[None])[0],
            pose.apply(self.contact_b[None])[0],
            R @ self.axis,
            R @ self.approach,
            pose @ self.gripper_pose,
            self.width,
            tuple(R @ a for a in self.approaches),
        )

    def to_dict(self) -> dict:
        vec = lambda v: [float(x) for x in v]  # noqa: E731
        return {
            "contact_a": vec(self.contact_a),
            "contact_b": vec(self.contact_b),
            "axis": vec(self.axis),
            "width": float(self.width),
            "approaches": [vec(a) for a in self.approaches],
        }


# -- box primitives ----------------------------------------------------------


def gripper_boxes(width: float, gripper: GripperSpec, inflate: float = 0.0):
    """(center, half_extent) boxes in the gripper frame, swept over opening and standoff."""
    fw, th, fl = gripper.finger_width, gripper.finger_thickness, gripper.finger_length
    open_half = max(gripper.max_opening, width) / 2
    z_top = fw / 2
    z_bot = fw / 2 - fl - gripper.approach_standoff
    y_in, y_out = width / 2 + CONTACT_GAP, open_half + th
    boxes = []
    for sign in (1.0, -1.0):
        c = np.array([0.0, sign * (y_in + y_out) / 2, (z_top + z_bot) / 2])
        h = np.array([fw / 2, (y_out - y_in) / 2, (z_top - z_bot) / 2])
        boxes.append((c, h + inflate))
    pc = gripper.palm_clearance
    palm_top = fw / 2 - fl
    palm_bot = palm_top - th - gripper.approach_standoff
    c = np.array([0.0, 0.0, (palm_top + palm_bot) / 2])
    h = np.array([fw / 2 + pc, y_out + pc, (palm_top - palm_bot) / 2])
    boxes.append((c, h + inflate))
    return boxes


def triangles_hit_box(tris: np.ndarray, center, half) -> np.ndarray:
    """Separating-axis overlap test of triangles (m, 3, 3) with an axis-aligned box."""
    T = np.asarray(tris, dtype=float) - np.asarray(center, dtype=float)
    half = np.asarray(half, dtype=float)
    m = len(T)
    if m == 0:
        return np.zeros(0, dtype=bool)
    E = np.stack([T[:, 1] - T[:, 0], T[:, 2] - T[:, 1], T[:, 0] - T[:, 2]], axis=1)
    axes = [np.broadcast_to(np.eye(3)[i], (m, 3)) for i in range(3)]
    axes.append(np.cross(E[:, 0], E[:, 1]))
    for i in range(3):
        for j in range(3):
            axes.append(np.cross(E[:, i], np.eye(3)[j]))
    hit = np.ones(m, dtype=bool)
    for L in axes:
        p = np.einsum("mvk,mk->mv", T, L)
        r = np.abs(L) @ half
        hit &= ~((p.min(axis=1) > r + 1e-12) | (p.max(axis=1) < -r - 1e-12))
    return hit


def box_corners(center, half, pose: Pose) -> np.ndarray:
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    return pose.apply(np.asarray(center) + signs * np.asarray(half))


_BOX_EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]


def box_in_environment_free(corners: np.ndarray, cavity: CavitySpec) -> bool:
    """True when a posed box stays clear of the jig (above the membrane or inside the void)."""
    rim = cavity.rim_z
    z = corners[:, 2]
    if z.min() >= rim:
        return True
    pts = [corners[z <= rim]]
    for a, b in _BOX_EDGES:
        za, zb = z[a], z[b]
        if (za - rim) * (zb - rim) < 0:
            t = (rim - za) / (zb - za)
            pts.append((corners[a] + t * (corners[b] - corners[a]))[None])
    P = np.vstack(pts)
    return bool(np.all(cavity.face_coordinates(P) >= 0))


# -- generation --------------------------------------------------------------


def _ray_exit(origins, dirs, corners, eps=1e-9):
    """Distance along each ray to the farthest-side exit facet (Moller-Trumbore)."""
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    e1, e2 = b - a, c - a
    out = np.full(len(origins), np.inf)
    face = np.full(len(origins), -1)
    fn = np.cross(e1, e2)
    for r, (o, d) in enumerate(zip(origins, dirs)):
        h = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, h)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = o - a
        u = np.einsum("ij,ij->i", s, h) * inv
        qv = np.cross(s, e1)
        v = (qv @ d) * inv
        t = np.einsum("ij,ij->i", e2, qv) * inv
        hit = ok & (u >= -eps) & (v >= -eps) & (u + v <= 1 + eps) & (t > 1e-6) & (fn @ d > 0)
        if hit.any():
            idx = np.nonzero(hit)[0]
            k = idx[np.argmin(t[idx])]
            out[r], face[r] = t[k], k
    return out, face


def _plane_basis(axis):
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(axis, u)


def gripper_pose(center, axis, approach) -> Pose:
    y = np.asarray(axis, dtype=float)
    zz = np.asarray(approach, dtype=float)
    x = np.cross(y, zz)
    return Pose(np.column_stack([x, y, zz]), center)


def generate_grasps(
    obj: TriMesh,
    gripper: GripperSpec | None = None,
    mu_finger: float = 0.3,
    sample_count: int = 200,
    seed: int = 0,
) -> list[GraspCandidate]:
    """Antipodal pairs found by casting rays inward from sampled surface points."""
    gripper = gripper or GripperSpec()
    if sample_count <= 0:
        raise ValueError("sample_count must be positive")
    if mu_finger < 0:
        raise ValueError("mu_finger must be non-negative")
    rng = np.random.default_rng(seed)
    C = obj.corners
    normals = obj.face_normals
    areas = obj.areas
    tri = rng.choice(len(C), size=sample_count, p=areas / areas.sum())
    r1, r2 = rng.random(sample_count), rng.random(sample_count)
    flip = r1 + r2 > 1
    r1, r2 = np.where(flip, 1 - r1, r1), np.where(flip, 1 - r2, r2)
    P = C[tri, 0] + r1[:, None] * (C[tri, 1] - C[tri, 0]) + r2[:, None] * (C[tri, 2] - C[tri, 0])
    N = normals[tri]
    dist, exit_face = _ray_exit(P, -N, C)
    cos_cone = math.cos(math.atan(mu_finger))
    out = []
    for i in range(sample_count):
        w = dist[i]
        if not np.isfinite(w) or w > gripper.max_opening:
            continue
        axis = -N[i]
        if normals[exit_face[i]] @ axis < cos_cone - 1e-9:
            continue
        a, b = P[i], P[i] - w * N[i]
        center = (a + b) / 2
        free = []
        u, v = _plane_basis(axis)
        for j in range(gripper.approach_count):
            th = 2 * math.pi * j / gripper.approach_count
            app = math.cos(th) * u + math.sin(th) * v
            pose = gripper_pose(center, axis, app)
            local = pose.inverse().apply(C.reshape(-1, 3)).reshape(-1, 3, 3)
            if not any(triangles_hit_box(local, c, h).any() for c, h in gripper_boxes(w, gripper)):
                free.append(app)
        if free:
            out.append(GraspCandidate(a, b, axis, free[0], gripper_pose(center, axis, free[0]), float(w), tuple(free)))
    return out


# -- feasibility -------------------------------------------------------------


def approach_feasible(
    grasp: GraspCandidate,
    obj: TriMesh,
    object_pose: Pose,
    cavity: CavitySpec,
    jig: JigSpec | None = None,
    gripper: GripperSpec | None = None,
    approach=None,
) -> bool:
    """Does the gripper reach ``grasp`` (object frame) without touching the jig?"""
    gripper = gripper or GripperSpec()
    g = grasp.transformed(object_pose)
    app = g.approach if approach is None else object_pose.rotation @ np.asarray(approach, dtype=float)
    pose = gripper_pose((g.contact_a + g.contact_b) / 2, g.axis, app)
    for c, h in gripper_boxes(g.width, gripper, inflate=SAFETY):
        if not box_in_environment_free(box_corners(c, h, pose), cavity):
            return False
    return True


def count_feasible(
    obj: TriMesh,
    spp: Pose,
    cavity: CavitySpec,
    jig: JigSpec | None,
    gripper: GripperSpec | None,
    grasps: list[GraspCandidate],
) -> int:
    """Number of grasps with at least one collision-free approach at this placement."""
    return sum(
        any(approach_feasible(g, obj, spp, cavity, jig, gripper, a) for a in g.approaches)
        for g in grasps
    )
