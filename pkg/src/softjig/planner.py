"""Stamping-depth sweep: rest-pose enumeration, scoring and the drop pose."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull

from .cavity import (
    CavitySpec,
    EqualAngle,
    JigSpec,
    build_cavity,
    stamp_transform,
    vertical_clearance,
)
from .contacts import detect_contacts
from .errors import NoContacts, NoStablePose, PenetrationTooDeep
from .geometry import Pose, axis_angle, rot_z, rotation_taking, snap
from .grasps import GraspCandidate, GripperSpec, count_feasible, generate_grasps
from .stability import (
    DEFAULT_WRENCH_CAP,
    Part,
    StabilityVerdict,
    as_part,
    spp_test,
    support_polygon,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerConfig:
    lam: float = 0.5
    depth_min: float = 1.0
    depth_max: float = 40.0
    depth_step: float = 1.0
    mu_cavity: float = 1.97
    cone_edges: int = 4
    moment_scale: Optional[float] = None  # None: bounding-sphere radius about the COM
    gravity: float = 9.81
    contact_tol: float = 0.5
    wrench_cap: int = DEFAULT_WRENCH_CAP
    max_rest_candidates: int = 24
    settle_steps: int = 3
    apex_xy: tuple = (0.0, 0.0)
    orientation: object = field(default_factory=EqualAngle)
    fillet_radius: float = 2.0
    mu_finger: float = 0.3
    grasp_samples: int = 200

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 < self.depth_min < self.depth_max:
            raise ValueError("need 0 < depth_min < depth_max")
        if self.depth_step <= 0:
            raise ValueError("depth_step must be positive")
        if self.cone_edges < 3:
            raise ValueError("cone_edges must be at least 3")
        if self.moment_scale is not None and self.moment_scale <= 0:
            raise ValueError("moment_scale must be positive")

    def depths(self) -> list[float]:
        n = int(math.floor((self.depth_max - self.depth_min) / self.depth_step + 1e-9))
        return [float(snap(self.depth_min + i * self.depth_step)) for i in range(n + 1)]


@dataclass(frozen=True, eq=False)
class DepthEvaluation:
    depth: float
    margin: float  # dimensionless, see StabilityVerdict.planning_margin
    grasp_count: int
    margin_norm: float = float("nan")
    count_norm: float = float("nan")
    score: float = float("nan")
    valid: bool = True
    spp: Optional[Pose] = None
    verdict: Optional[StabilityVerdict] = None

    def row(self) -> dict:
        return {
            "depth": self.depth,
            "margin": self.margin,
            "grasp_count": self.grasp_count,
            "margin_norm": self.margin_norm,
            "count_norm": self.count_norm,
            "score": self.score,
            "valid": self.valid,
        }


@dataclass(frozen=True, eq=False)
class PlanResult:
    best_depth: float
    spp: Pose
    ddp: Pose
    sweep: list
    stamp_transform: Pose
    verdict_at_best: StabilityVerdict
    cavity: CavitySpec
    lam: float


def make_cavity(depth: float, cfg: PlannerConfig, jig: JigSpec | None = None) -> CavitySpec:
    return build_cavity(float(snap(depth)), cfg.apex_xy, cfg.orientation, cfg.fillet_radius, jig)


# -- rest-pose enumeration ---------------------------------------------------


def _hull_faces(points: np.ndarray, com: np.ndarray):
    """Merged coplanar hull facets as (outward normal, area, distance from COM)."""
    hull = ConvexHull(points)
    groups: dict[tuple, list] = {}
    for simplex, eq in zip(hull.simplices, hull.equations):
        key = tuple(np.round(eq, 7))
        a, b, c = points[simplex]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a))
        groups.setdefault(key, [eq[:3], 0.0])
        groups[key][1] += area
    faces = []
    for key in sorted(groups):
        n, area = groups[key]
        n = n / np.linalg.norm(n)
        dist = float(np.max(points @ n) - n @ com)
        faces.append((n, area, dist))
    return faces


def _rest_orientations(part: Part, limit: int) -> list[np.ndarray]:
    faces = _hull_faces(part.mesh.vertices, part.com)
    classes: dict[tuple, list] = {}
    for n, area, dist in faces:
        classes.setdefault((round(-area, 5), round(dist, 5)), []).append(n)
    ordered = [classes[k] for k in sorted(classes)]
    out = []
    i = 0
    while len(out) < limit and any(i < len(c) for c in ordered):
        for c in ordered:
            if i < len(c) and len(out) < limit:
                out.append(c[i])
        i += 1
    return out


def _hull_vertex_edges(points: np.ndarray):
    """Hull vertices with one incident feature edge each (coplanar diagonals skipped)."""
    hull = ConvexHull(points)
    planes = [tuple(np.round(eq, 7)) for eq in hull.equations]
    owners: dict[tuple, list] = {}
    for f, simplex in enumerate(hull.simplices):
        for a in range(3):
            e = tuple(sorted((int(simplex[a]), int(simplex[(a + 1) % 3]))))
            owners.setdefault(e, []).append(f)
    incident: dict[int, list] = {}
    for (a, b), fs in sorted(owners.items()):
        if len(fs) == 2 and planes[fs[0]] == planes[fs[1]]:
            continue
        incident.setdefault(a, []).append(b)
        incident.setdefault(b, []).append(a)
    return [(v, incident[v]) for v in sorted(incident)]


def _vertex_orientations(part: Part, cavity: CavitySpec, limit: int) -> list[np.ndarray]:
    """Vertex-down rotations: a hull vertex under the COM, one incident edge along a cavity edge."""
    P = part.mesh.vertices
    classes: dict[tuple, list] = {}
    for v, nbrs in _hull_vertex_edges(P):
        dist = float(np.linalg.norm(P[v] - part.com))
        classes.setdefault((round(-dist, 5), len(nbrs)), []).append((v, nbrs[0]))
    ordered = [classes[k] for k in sorted(classes)]
    axis_yaw = [math.atan2(a[1], a[0]) for a in cavity.axes]
    out = []
    i = 0
    while len(out) < limit and any(i < len(c) for c in ordered):
        for c in ordered:
            if i >= len(c) or len(out) >= limit:
                continue
            v, u = c[i]
            R0 = rotation_taking(P[v] - part.com, [0.0, 0.0, -1.0])
            e = R0 @ (P[u] - P[v])
            if math.hypot(e[0], e[1]) < 1e-9:
                continue
            phi = math.atan2(e[1], e[0])
            out.extend(rot_z(psi - phi) @ R0 for psi in axis_yaw)
        i += 1
    return out[:limit]


def lower_onto(part: Part, R: np.ndarray, cavity: CavitySpec) -> Pose:
    """Place the COM above the apex and drop vertically to first contact."""
    V = part.mesh.vertices @ R.T
    c = R @ part.com
    t = np.array([cavity.apex[0] - c[0], cavity.apex[1] - c[1], cavity.rim_z + 1.0 - V[:, 2].min()])
    pose = Pose(R, snap(t))
    gap = vertical_clearance(cavity, part.mesh.transformed(pose))
    return Pose(R, snap(pose.translation - [0.0, 0.0, gap]))


def _settle_pivot(contacts, com):
    """Tipping axis (point, unit direction) when the COM overhangs the support."""
    poly = support_polygon(contacts)
    g = com[:2]
    P = np.array([c.position for c in contacts])
    V = poly.vertices
    if len(V) >= 3:
        best = None
        for i in range(len(V)):
            a, b = V[i], V[(i + 1) % len(V)]
            e = b - a
            out = (e[0] * (g[1] - a[1]) - e[1] * (g[0] - a[0])) / np.linalg.norm(e)
            if out < 0 and (best is None or out > best[0]):
                best = (out, a, b)
        if best is None:
            return None
        a2, b2 = best[1], best[2]
    elif len(V) == 2:
        a2, b2 = V[0], V[1]
    else:
        a2 = b2 = V[0]
    # lift the 2-D support points back onto the contacts they came from
    ia = int(np.argmin(np.linalg.norm(P[:, :2] - a2, axis=1)))
    ib = int(np.argmin(np.linalg.norm(P[:, :2] - b2, axis=1)))
    p = P[ia]
    axis = P[ib] - P[ia]
    if np.linalg.norm(axis) < 1e-9:
        lever = com - p
        axis = np.cross([0.0, 0.0, 1.0], lever)
        if np.linalg.norm(axis) < 1e-9:
            return None
    axis = axis / np.linalg.norm(axis)
    if np.cross(axis, com - p)[2] > 0:
        axis = -axis
    return p, axis


def _tip(part: Part, pose: Pose, cavity: CavitySpec, p, axis) -> Pose | None:
    """Rotate about the pivot until another feature lands on the jig."""

    def rotated(theta):
        Rr = axis_angle(axis, theta)
        return Pose(Rr @ pose.rotation, Rr @ (pose.translation - p) + p)

    def gap(theta):
        return vertical_clearance(cavity, part.mesh.transformed(rotated(theta)))

    lo = 0.0
    for deg in range(1, 181):
        hi = math.radians(deg)
        if gap(hi) < -1e-6:
            break
        lo = hi
    else:
        return None
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if gap(mid) < -1e-6:
            hi = mid
        else:
            lo = mid
    q = rotated(lo)
    R = q.rotation
    g = gap(lo)
    return Pose(R, snap(q.translation - [0.0, 0.0, g]))


def settle(part: Part, pose: Pose, cavity: CavitySpec, cfg: PlannerConfig) -> Pose:
    for _ in range(cfg.settle_steps):
        contacts = detect_contacts(part.mesh, pose, cavity, cfg.contact_tol)
        if not contacts:
            break
        com = pose.apply(part.com[None])[0]
        if support_polygon(contacts).signed_distance(com[:2]) > 0:
            break
        pivot = _settle_pivot(contacts, com)
        if pivot is None:
            break
        nxt = _tip(part, pose, cavity, *pivot)
        if nxt is None:
            break
        pose = nxt
    return pose


def _pose_key(part: Part, pose: Pose) -> bytes:
    V = np.round(pose.apply(part.mesh.vertices), 6) + 0.0
    return np.ascontiguousarray(V[np.lexsort(V.T[::-1])]).tobytes()


def rest_candidates(obj, cavity: CavitySpec, cfg: PlannerConfig | None = None) -> list[tuple[Pose, StabilityVerdict]]:
    """Settled rest poses that pass the stability test, with their verdicts."""
    cfg = cfg or PlannerConfig()
    part = as_part(obj)
    out, seen = [], set()
    rotations = [rot_z(cavity.yaw) @ rotation_taking(n, [0.0, 0.0, -1.0]) for n in _rest_orientations(part, cfg.max_rest_candidates)]
    rotations += _vertex_orientations(part, cavity, cfg.max_rest_candidates // 2)
    for R in rotations:
        try:
            pose = settle(part, lower_onto(part, R, cavity), cavity, cfg)
            key = _pose_key(part, pose)
            if key in seen:
                continue
            seen.add(key)
            verdict = spp_test(part, pose, cavity, cfg)
        except (NoContacts, PenetrationTooDeep) as exc:
            log.debug("rest hypothesis dropped: %s", exc)
            continue
        if verdict.stable:
            out.append((pose, verdict))
    return out


def candidate_spps(obj, cavity: CavitySpec, cfg: PlannerConfig | None = None) -> list[Pose]:
    found = rest_candidates(obj, cavity, cfg)
    if not found:
        raise NoStablePose(f"no stable rest pose at depth {cavity.depth:g} mm")
    return [p for p, _ in found]


# -- depth evaluation and selection ------------------------------------------


def best_rest(obj, cavity: CavitySpec, cfg: PlannerConfig) -> tuple[Pose, StabilityVerdict]:
    found = rest_candidates(obj, cavity, cfg)
    if not found:
        raise NoStablePose(f"no stable rest pose at depth {cavity.depth:g} mm")
    best = max(range(len(found)), key=lambda i: (found[i][1].planning_margin, -i))
    return found[best]


def evaluate_depth(
    obj,
    depth: float,
    cfg: PlannerConfig,
    gripper: GripperSpec,
    jig: JigSpec,
    grasps: Sequence[GraspCandidate],
) -> DepthEvaluation:
    part = as_part(obj)
    cavity = make_cavity(depth, cfg, jig)
    pose, verdict = best_rest(part, cavity, cfg)
    n = count_feasible(part.mesh, pose, cavity, jig, gripper, list(grasps))
    return DepthEvaluation(cavity.depth, float(verdict.planning_margin), int(n), spp=pose, verdict=verdict)


def sweep_depths(obj, cfg: PlannerConfig, gripper: GripperSpec, jig: JigSpec, grasps) -> list[DepthEvaluation]:
    out = []
    for d in cfg.depths():
        try:
            out.append(evaluate_depth(obj, d, cfg, gripper, jig, grasps))
        except NoStablePose:
            out.append(DepthEvaluation(d, float("nan"), 0, score=float("-inf"), valid=False))
    return out


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.ones_like(x)
    return (x - lo) / (hi - lo)


def score_sweep(evals: Sequence[DepthEvaluation], lam: float) -> list[DepthEvaluation]:
    """Min-max normalize margin and grasp count over the valid depths and weight them."""
    valid = [e for e in evals if e.valid]
    if not valid:
        return list(evals)
    m = _minmax(np.array([e.margin for e in valid], dtype=float))
    c = _minmax(np.array([e.grasp_count for e in valid], dtype=float))
    scored = iter(zip(m, c))
    out = []
    for e in evals:
        if not e.valid:
            out.append(replace(e, score=float("-inf")))
            continue
        mn, cn = next(scored)
        out.append(replace(e, margin_norm=float(mn), count_norm=float(cn), score=float(lam * cn + (1 - lam) * mn)))
    return out


def select_best(evals: Sequence[DepthEvaluation]) -> DepthEvaluation:
    """Highest score; ties go to the deeper cavity."""
    valid = [e for e in evals if e.valid]
    if not valid:
        raise NoStablePose("no depth in the sweep yields a stable pose")
    return max(valid, key=lambda e: (e.score, e.depth))


def drop_pose(spp: Pose, cavity: CavitySpec) -> Pose:
    """Release pose: the rest pose lifted by twice the cavity depth."""
    t = np.array(spp.translation, dtype=float)
    t[2] = t[2] + 2.0 * cavity.depth
    return Pose(spp.rotation, t)


def plan_from_sweep(evals, cfg: PlannerConfig, jig: JigSpec, source: Pose | None = None, lam: float | None = None) -> PlanResult:
    lam = cfg.lam if lam is None else lam
    scored = score_sweep(evals, lam)
    best = select_best(scored)
    cavity = make_cavity(best.depth, cfg, jig)
    return PlanResult(
        best_depth=best.depth,
        spp=best.spp,
        ddp=drop_pose(best.spp, cavity),
        sweep=scored,
        stamp_transform=stamp_transform(cavity, source or Pose.identity()),
        verdict_at_best=best.verdict,
        cavity=cavity,
        lam=lam,
    )


def optimize_depth(
    obj,
    cfg: PlannerConfig | None = None,
    gripper: GripperSpec | None = None,
    jig: JigSpec | None = None,
    grasps: Sequence[GraspCandidate] | None = None,
    seed: int = 0,
    source: Pose | None = None,
) -> PlanResult:
    cfg = cfg or PlannerConfig()
    gripper = gripper or GripperSpec()
    jig = jig or JigSpec()
    part = as_part(obj)
    if grasps is None:
        grasps = generate_grasps(part.mesh, gripper, cfg.mu_finger, cfg.grasp_samples, seed)
    evals = sweep_depths(part, cfg, gripper, jig, grasps)
    return plan_from_sweep(evals, cfg, jig, source)
