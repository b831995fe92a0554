import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import in_hull_lp
from softjig.cavity import RIM, build_cavity
from softjig.contacts import ContactPoint, WrenchSet, WrenchVector, friction_cone
from softjig.errors import NoContacts
from softjig.geometry import Pose, boundary_distance
from softjig.planner import PlannerConfig, best_rest, make_cavity
from softjig.shapes import box, cube
from softjig.stability import (
    Part,
    StabilityKind,
    StabilityVerdict,
    reduce_to_face_extremes,
    spp_test,
    stability_margin,
    support_polygon,
    wrench_space,
)


def resting_box(w, l, h, depth=20.0, com=None, mass=0.1):
    cav = build_cavity(depth)
    part = Part(box(w, l, h), mass, com)
    return part, Pose(np.eye(3), [0.0, 0.0, h / 2]), cav


@given(st.floats(36.0, 60.0), st.floats(36.0, 60.0), st.floats(5.0, 40.0))
def test_flat_box_margin_is_half_the_short_side(w, l, h):
    part, pose, cav = resting_box(w, l, h)
    v = spp_test(part, pose, cav)
    assert v.kind is StabilityKind.GEOMETRIC
    assert v.margin == pytest.approx(min(w, l) / 2, abs=1e-9)


@given(st.floats(-30.0, 30.0))
def test_shifted_com_margin(dx):
    part, pose, cav = resting_box(40.0, 40.0, 40.0, com=[dx, 0.0, 0.0])
    v = spp_test(part, pose, cav)
    assert v.margin == pytest.approx(min(20.0 - abs(dx), 20.0), abs=1e-9)
    assert v.stable == (abs(dx) < 20.0)


def test_geometric_margin_independent_of_mass():
    a = spp_test(*resting_box(40, 40, 40, mass=0.01))
    b = spp_test(*resting_box(40, 40, 40, mass=5.0))
    assert a.kind is b.kind is StabilityKind.GEOMETRIC
    assert a.margin == b.margin


def test_cross_polytope_inradius():
    c = ContactPoint([0, 0, 0], [0, 0, 1], 0)
    E = np.vstack([np.eye(6), -np.eye(6)])
    ws = WrenchSet(c, [WrenchVector(e[:3], e[3:]) for e in E])
    hull = wrench_space([ws])
    assert len(hull.vertices) == 12
    assert boundary_distance(hull, np.zeros(6)) == pytest.approx(1 / math.sqrt(6))


def test_wrench_branch_is_preferred(cube_part):
    cfg = PlannerConfig()
    cav = make_cavity(40.0, cfg)
    pose, v = best_rest(cube_part, cav, cfg)
    assert v.kind is StabilityKind.WRENCH
    assert v.support_polygon is None
    assert in_hull_lp(v.wrench_hull.vertices, -v.gravity)
    assert stability_margin(v) == pytest.approx(v.margin, abs=1e-12)
    assert v.planning_margin == pytest.approx(1.0 + v.margin / np.linalg.norm(v.gravity))


def test_planning_margin_tiers():
    g = np.array([0, 0, -1.0, 0, 0, 0])
    geo = StabilityVerdict(StabilityKind.GEOMETRIC, 3.0, rho=6.0)
    wr = StabilityVerdict(StabilityKind.WRENCH, 0.0001, gravity=g)
    assert geo.planning_margin == pytest.approx(0.5) and wr.planning_margin > 1.0
    assert not StabilityVerdict(StabilityKind.UNSTABLE, -1.0).stable
    assert set(wr.to_dict()) >= {"kind", "margin", "relative_margin", "planning_margin", "contacts"}


def test_frictionless_wall_contacts_fall_back_to_geometry(shaft_part):
    cfg = PlannerConfig()
    cav = make_cavity(10.0, cfg)
    pose, _ = best_rest(shaft_part, cav, cfg)
    v = spp_test(shaft_part, pose, cav, dataclasses.replace(cfg, mu_cavity=0.0))
    assert v.kind is StabilityKind.GEOMETRIC
    assert v.wrench_hull is None


def test_no_contacts_raises():
    cav = build_cavity(10.0)
    with pytest.raises(NoContacts):
        spp_test(Part(cube(40.0)), Pose(np.eye(3), [0.0, 0.0, 40.0]), cav)


def test_two_point_support_is_unstable():
    contacts = [ContactPoint([-5, 0, 0], [0, 0, 1], RIM), ContactPoint([5, 0, 0], [0, 0, 1], RIM)]
    poly = support_polygon(contacts)
    assert len(poly.vertices) == 2
    assert poly.signed_distance([0.0, 0.0]) == 0.0
    assert poly.signed_distance([0.0, 1.0]) == pytest.approx(-1.0)


def test_face_extremes_keep_the_deepest_contact():
    sets = [
        friction_cone(ContactPoint([0, 0, z], [0, 0, 1], f, penetration=p), 0.5, 4, [0, 0, 5], 5.0)
        for z, f, p in [(0, 0, 0.1), (1, 0, 0.3), (2, 1, 0.0), (3, RIM, 0.2)]
    ]
    kept = reduce_to_face_extremes(sets)
    assert [ws.contact.face_id for ws in kept] == [0, 1, RIM]
    assert kept[0].contact.penetration == 0.3


def test_cap_overflow_reduces_to_face_extremes(cube_part):
    cfg = PlannerConfig()
    cav = make_cavity(40.0, cfg)
    pose, v = best_rest(cube_part, cav, cfg)
    sets = [friction_cone(c, cfg.mu_cavity, cfg.cone_edges, pose.apply(cube_part.com[None])[0], v.rho) for c in v.contacts]
    extra = sets + [sets[0]]
    hull = wrench_space(extra, cap=4 ** len(sets))
    ref = wrench_space(reduce_to_face_extremes(extra))
    np.testing.assert_allclose(np.sort(hull.vertices, axis=0), np.sort(ref.vertices, axis=0))


def test_part_validation():
    with pytest.raises(ValueError):
        Part(cube(1.0), 0.0)
    p = Part(cube(2.0))
    assert p.bounding_radius == pytest.approx(math.sqrt(3))
