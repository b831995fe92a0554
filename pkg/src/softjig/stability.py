"""Placement stability: L-infinity wrench space with a support-polygon fallback."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cavity import CavitySpec
from .contacts import ContactPoint, WrenchSet, detect_contacts, friction_cone, gravity_wrench
from .errors import CapExceeded, DegenerateInput, NoContacts
from .geometry import (
    ConvexPolytope,
    Pose,
    TriMesh,
    boundary_distance,
    contains,
    convex_hull,
    hull_2d,
    minkowski_hull,
    polygon_signed_distance,
)

DEFAULT_WRENCH_CAP = 256


class StabilityKind(str, enum.Enum):
    WRENCH = "WrenchStable"
    GEOMETRIC = "GeometricStable"
    UNSTABLE = "Unstable"


@dataclass(frozen=True, eq=False)
class Part:
    """Rigid part: geometry in its own frame, mass and centre of mass."""

    mesh: TriMesh
    mass: float = 0.1  # kg
    com: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        com = self.mesh.center_of_mass() if self.com is None else self.com
        com = np.array(com, dtype=float)
        com.setflags(write=False)
        object.__setattr__(self, "com", com)

    @property
    def bounding_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.mesh.vertices - self.com, axis=1)))


def as_part(obj) -> Part:
    return obj if isinstance(obj, Part) else Part(obj)


@dataclass(frozen=True, eq=False)
class SupportPolygon:
    height: float  # z of the horizontal support plane
    vertices: np.ndarray  # CCW, possibly 1 or 2 points when degenerate

    def signed_distance(self, xy) -> float:
        return polygon_signed_distance(self.vertices, xy)


@dataclass(frozen=True, eq=False)
class StabilityVerdict:
    kind: StabilityKind
    margin: float
    contacts: list = field(default_factory=list)
    wrench_hull: Optional[ConvexPolytope] = None
    support_polygon: Optional[SupportPolygon] = None
    gravity: Optional[np.ndarray] = None
    rho: float = 1.0

    @property
    def stable(self) -> bool:
        return self.kind is not StabilityKind.UNSTABLE

    @property
    def relative_margin(self) -> float:
        """Dimensionless margin: per unit weight (wrench) or per ``rho`` (geometric)."""
        if self.kind is StabilityKind.WRENCH:
            return self.margin / float(np.linalg.norm(self.gravity))
        return self.margin / self.rho

    @property
    def planning_margin(self) -> float:
        """Tiered score for ranking poses across branches.

        A geometric margin never exceeds ``rho`` (contacts lie within the
        bounding sphere), so ``d / rho <= 1``, while wrench closure scores
        ``1 + margin / |w_g|``: any closure certificate outranks static balance.
        """
        if self.kind is StabilityKind.WRENCH:
            return 1.0 + self.relative_margin
        return self.relative_margin

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind.value,
            "margin": float(self.margin),
            "relative_margin": float(self.relative_margin),
            "planning_margin": float(self.planning_margin),
            "contacts": [c.to_dict() for c in self.contacts],
        }
        if self.wrench_hull is not None:
            d["hull"] = {"vertices": len(self.wrench_hull.vertices), "facets": len(self.wrench_hull.offsets)}
        if self.support_polygon is not None:
            d["support_polygon"] = [[float(v) for v in p] for p in self.support_polygon.vertices]
        return d


def reduce_to_face_extremes(wrench_sets: Sequence[WrenchSet]) -> list[WrenchSet]:
    """Keep the deepest contact on each cavity face (and on the rim)."""
    best: dict[int, WrenchSet] = {}
    for ws in wrench_sets:
        f = ws.contact.face_id
        if f not in best or ws.contact.penetration > best[f].contact.penetration + 1e-12:
            best[f] = ws
    return [best[f] for f in sorted(best)]


def wrench_space(wrench_sets: Sequence[WrenchSet], cap: int = DEFAULT_WRENCH_CAP) -> ConvexPolytope:
    """Hull of the Minkowski sum of the per-contact wrench vertex sets."""
    sets = list(wrench_sets)
    if not sets:
        raise ValueError("need at least one wrench set")
    try:
        pts = minkowski_hull([ws.matrix for ws in sets], cap)
    except CapExceeded:
        sets = reduce_to_face_extremes(sets)
        pts = minkowski_hull([ws.matrix for ws in sets], cap)
    return convex_hull(pts, 6)


def support_polygon(contacts: Sequence[ContactPoint]) -> SupportPolygon:
    P = np.array([c.position for c in contacts])
    return SupportPolygon(float(P[:, 2].min()), hull_2d(P[:, :2]))


def moment_scale(part: Part, cfg=None) -> float:
    explicit = getattr(cfg, "moment_scale", None) if cfg is not None else None
    return float(explicit) if explicit else part.bounding_radius


def spp_test(obj, pose: Pose, cavity: CavitySpec, cfg=None) -> StabilityVerdict:
    """Is ``obj`` at ``pose`` a stable placement in ``cavity``?

    Contact forces must be able to balance the weight inside the wrench
    space; failing that, the COM projection is tested against the support
    polygon.  ``cfg`` supplies ``mu_cavity``, ``cone_edges``, ``contact_tol``,
    ``gravity``, ``wrench_cap`` and ``moment_scale`` (missing fields take
    defaults).
    """
    part = as_part(obj)
    mu = getattr(cfg, "mu_cavity", 1.97)
    k = getattr(cfg, "cone_edges", 4)
    tol = getattr(cfg, "contact_tol", 0.5)
    g = getattr(cfg, "gravity", 9.81)
    cap = getattr(cfg, "wrench_cap", DEFAULT_WRENCH_CAP)
    contacts = detect_contacts(part.mesh, pose, cavity, tol)
    if not contacts:
        raise NoContacts("object does not touch the cavity")
    rho = moment_scale(part, cfg)
    com = pose.apply(part.com[None, :])[0]
    wg = gravity_wrench(part.mass, com, rho, g).as_array()
    hull = None
    try:
        hull = wrench_space([friction_cone(c, mu, k, com, rho) for c in contacts], cap)
    except (DegenerateInput, CapExceeded):
        hull = None
    if hull is not None and contains(hull, -wg):
        m = boundary_distance(hull, -wg)
        if m > 0:
            return StabilityVerdict(StabilityKind.WRENCH, m, contacts, hull, None, wg, rho)
    poly = support_polygon(contacts)
    m = poly.signed_distance(com[:2])
    kind = StabilityKind.GEOMETRIC if m > 0 else StabilityKind.UNSTABLE
    return StabilityVerdict(kind, m, contacts, hull, poly, wg, rho)


def geometric_margin(obj, pose: Pose, cavity: CavitySpec, tol: float = 0.5) -> float:
    """Support-polygon margin only; cheap check used while settling poses."""
    part = as_part(obj)
    contacts = detect_contacts(part.mesh, pose, cavity, tol)
    if not contacts:
        raise NoContacts("object does not touch the cavity")
    com = pose.apply(part.com[None, :])[0]
    return support_polygon(contacts).signed_distance(com[:2])


def stability_margin(verdict: StabilityVerdict) -> float:
    if verdict.kind is StabilityKind.WRENCH and verdict.wrench_hull is not None:
        h = verdict.wrench_hull
        return float(np.min(h.offsets - h.normals @ (-verdict.gravity)))
    return float(verdict.margin)
