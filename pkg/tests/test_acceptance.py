"""Exit criteria.  Each test carries ``@pytest.mark.acceptance(n, title)``;
conftest prints one PASS/FAIL line per criterion after the run."""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np
import pytest

from oracles import equal_angle_polar, exhaustive_best_depth, extreme_rows_lp, in_hull_lp, minkowski_enumeration, same_rows
from softjig import cli
from softjig.cavity import EqualAngle, ExplicitAngles, build_cavity, cavity_point_cloud, edge_elevations
from softjig.contacts import ContactPoint, friction_cone
from softjig.errors import DegenerateInput, InfeasibleOrientation
from softjig.geometry import PointCloud, Pose, axis_angle, minkowski_hull, rot_z, rotation_angle
from softjig.grasps import GripperSpec, count_feasible, generate_grasps
from softjig.planner import PlannerConfig, best_rest, lower_onto, make_cavity, optimize_depth, plan_from_sweep, rest_candidates
from softjig.registration import RegistrationParams, register
from softjig.reports import SuccessCriterion, check_pose
from softjig.shapes import box, cube, cylinder, shaft
from softjig.stability import Part, StabilityKind, geometric_margin, spp_test, wrench_space

LAMBDAS = (0.0, 0.3, 0.5, 0.7, 1.0)
NOISE = 1e-9  # floating-point floor for margin comparisons


def report(number: int, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")


# -- 1 -------------------------------------------------------------------------


def _random_instance(rng):
    m = int(rng.integers(1, 4))
    k = int(rng.integers(3, 5))
    com = rng.uniform(-5, 5, 3)
    rho = float(rng.uniform(5, 30))
    sets = []
    for _ in range(m):
        n = rng.normal(size=3)
        n[2] = abs(n[2]) + 0.2
        c = ContactPoint(rng.uniform(-20, 20, 3), n, int(rng.integers(0, 4)))
        sets.append(friction_cone(c, float(rng.uniform(0.2, 2.0)), k, com, rho))
    return sets


@pytest.mark.acceptance(1, "wrench space matches exhaustive Minkowski enumeration (100 instances)")
def test_wrench_space_matches_enumeration():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = full = 0
    for _ in range(100):
        sets = _random_instance(rng)
        mats = [ws.matrix for ws in sets]
        enum = minkowski_enumeration(mats)
        ref = extreme_rows_lp(enum)
        mismatches += not same_rows(minkowski_hull(mats), ref, 1e-7)
        # each contact's unit cone edges share one normal component, so every
        # set is planar and only three contacts can span the 6-D wrench space
        if np.linalg.matrix_rank(enum - enum.mean(axis=0), tol=1e-9) == 6:
            full += 1
            mismatches += not same_rows(wrench_space(sets).vertices, ref, 1e-7)
        else:
            with pytest.raises(DegenerateInput):
                wrench_space(sets)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60
    report(1, ok, f"{mismatches} mismatches ({full} full-rank), {elapsed:.1f} s")
    assert mismatches == 0
    assert elapsed < 60


# -- 2 -------------------------------------------------------------------------


@pytest.mark.acceptance(2, "analytic cube margins: flat +20 mm, COM shifted 25 mm -5 mm")
def test_cube_analytic_margins():
    cfg = PlannerConfig()
    cavity = make_cavity(20.0, cfg)
    flat = Part(cube(40.0), 0.1)
    pose = lower_onto(flat, np.eye(3), cavity)
    v = spp_test(flat, pose, cavity, cfg)
    shifted = Part(cube(40.0), 0.1, com=[25.0, 0.0, 0.0])
    u = spp_test(shifted, pose, cavity, cfg)
    ok = (
        v.kind is StabilityKind.GEOMETRIC
        and abs(v.margin - 20.0) <= 1e-6
        and u.kind is StabilityKind.UNSTABLE
        and abs(u.margin + 5.0) <= 1e-6
    )
    report(2, ok, f"flat {v.kind.value} {v.margin:.9f}, shifted {u.kind.value} {u.margin:.9f}")
    assert v.kind is StabilityKind.GEOMETRIC
    assert v.margin == pytest.approx(20.0, abs=1e-6)
    assert u.kind is StabilityKind.UNSTABLE
    assert u.margin == pytest.approx(-5.0, abs=1e-6)


# -- 3 -------------------------------------------------------------------------


@pytest.mark.acceptance(3, "wrench closure is tested before the support polygon")
def test_branch_ordering(shaft_part, cube_part):
    cfg = PlannerConfig()
    # wrench closure holds and the COM is also inside the support polygon
    for part, depth in ((cube_part, 40.0), (shaft_part, 10.0)):
        cavity = make_cavity(depth, cfg)
        pose, v = best_rest(part, cavity, cfg)
        assert geometric_margin(part, pose, cavity, cfg.contact_tol) > 0
        assert v.kind is StabilityKind.WRENCH
        assert in_hull_lp(v.wrench_hull.vertices, -v.gravity)
    # nearly frictionless cavity: full-rank wrench space that excludes -w_g
    cavity = make_cavity(10.0, cfg)
    pose, _ = best_rest(shaft_part, cavity, cfg)
    slick = dataclasses.replace(cfg, mu_cavity=0.05)
    v = spp_test(shaft_part, pose, cavity, slick)
    assert v.wrench_hull is not None
    assert not in_hull_lp(v.wrench_hull.vertices, -v.gravity)
    assert v.support_polygon.signed_distance(pose.apply(shaft_part.com[None])[0, :2]) > 0
    assert v.kind is StabilityKind.GEOMETRIC
    report(3, True, "WrenchStable when both pass; GeometricStable when -w_g is outside the wrench space")


# -- 4, 6 ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def cube30_plans():
    """optimize_depth on a 50-point grid for every tested lambda."""
    base = PlannerConfig(depth_min=0.8, depth_max=40.0, depth_step=0.8, max_rest_candidates=8, grasp_samples=60)
    part = Part(cube(30.0), 0.05)
    grasps = generate_grasps(part.mesh, GripperSpec(), base.mu_finger, base.grasp_samples, 0)
    return {lam: optimize_depth(part, dataclasses.replace(base, lam=lam), grasps=grasps) for lam in LAMBDAS}


def _rows(plan):
    return [(e.depth, e.margin, e.grasp_count, e.valid) for e in plan.sweep]


@pytest.mark.acceptance(4, "optimize_depth agrees with an exhaustive scan on a 50-point grid")
def test_optimizer_matches_exhaustive_scan(cube30_plans):
    details = []
    for lam, plan in cube30_plans.items():
        assert len(plan.sweep) == 50
        expect = exhaustive_best_depth(_rows(plan), lam)
        details.append(f"lambda {lam}: {plan.best_depth:.4g}/{expect:.4g}")
        assert plan.best_depth == expect
    valid = [e for e in cube30_plans[0.0].sweep if e.valid]
    max_m = max(e.margin for e in valid)
    max_n = max(e.grasp_count for e in valid)
    # ties resolve to the deeper cavity
    assert cube30_plans[0.0].best_depth == max(e.depth for e in valid if e.margin == max_m)
    assert cube30_plans[1.0].best_depth == max(e.depth for e in valid if e.grasp_count == max_n)
    assert PlannerConfig().lam == 0.5
    report(4, True, "; ".join(details))


@pytest.mark.acceptance(6, "drop pose is the rest pose raised by exactly 2 D*")
def test_drop_pose_rule(cube30_plans, shaft_sweep, cube_sweep):
    plans = list(cube30_plans.values())
    for cfg, evals in (shaft_sweep, cube_sweep):
        plans += [plan_from_sweep(evals, cfg, None, lam=lam) for lam in LAMBDAS]
    for plan in plans:
        assert plan.ddp.translation[2] - plan.spp.translation[2] == 2.0 * plan.best_depth
        assert np.array_equal(plan.ddp.rotation, plan.spp.rotation)
        assert np.array_equal(plan.ddp.translation[:2], plan.spp.translation[:2])
    report(6, True, f"{len(plans)} plans checked")


# -- 5 -------------------------------------------------------------------------


@pytest.mark.acceptance(5, "D* stays within one depth step for lambda in [0.3, 0.7]")
@pytest.mark.parametrize("which", ["shaft", "cube"])
def test_lambda_robustness(which, shaft_sweep, cube_sweep):
    cfg, evals = shaft_sweep if which == "shaft" else cube_sweep
    ref = plan_from_sweep(evals, cfg, None, lam=0.5).best_depth
    spread = [plan_from_sweep(evals, cfg, None, lam=lam).best_depth for lam in np.linspace(0.3, 0.7, 41)]
    worst = max(abs(d - ref) for d in spread)
    report(5, worst <= cfg.depth_step, f"{which}: D*(0.5) = {ref:g} mm, largest deviation {worst:g} mm")
    assert worst <= cfg.depth_step


# -- 7 -------------------------------------------------------------------------


@pytest.mark.acceptance(7, "shaft: N_g non-increasing, M non-decreasing while three faces touch")
def test_shaft_trends(shaft_sweep):
    _, evals = shaft_sweep
    valid = [e for e in evals if e.valid]
    assert len(valid) == len(evals)
    counts = [e.grasp_count for e in valid]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    # the margin trend is claimed up to the first depth past which three-face contact is lost
    faces = [{c.face_id for c in e.verdict.contacts} for e in valid]
    three = [i for i, f in enumerate(faces) if {0, 1, 2} <= f]
    assert three, "the shaft never reaches the three cavity faces"
    end = len(valid)
    for i in range(three[0], len(valid)):
        if not {0, 1, 2} <= faces[i]:
            end = i
            break
    margins = [e.margin for e in valid[:end]]
    # equal support configurations reach the same margin through different
    # contact coordinates; allow for round-off only
    assert all(b >= a - NOISE for a, b in zip(margins, margins[1:]))
    report(7, True, f"N_g {counts[0]} -> {counts[-1]}, M {margins[0]:.4f} -> {margins[-1]:.4f} over {end} depths")


# -- 8 -------------------------------------------------------------------------


@pytest.mark.acceptance(8, "registration recovers random rigid motions (20 seeds)")
def test_registration_recovery():
    target = cavity_point_cloud(build_cavity(20.0), 1.0)
    params = RegistrationParams()
    worst = [0.0, 0.0]
    rmses = []
    t0 = time.perf_counter()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        R = axis_angle(rng.normal(size=3), math.radians(rng.uniform(0.0, 30.0)))
        t = rng.normal(size=3)
        t *= rng.uniform(0.0, 20.0) / np.linalg.norm(t)
        truth = Pose(R, t)
        noisy = truth.apply(target.points) + rng.normal(scale=1.0, size=target.points.shape)
        res = register(PointCloud(noisy), target, params, seed)
        expect = truth.inverse()
        worst[0] = max(worst[0], math.degrees(rotation_angle(expect.rotation.T @ res.transform.rotation)))
        worst[1] = max(worst[1], float(np.linalg.norm(res.transform.translation - expect.translation)))
        rmses.append(res.rmse)
    elapsed = time.perf_counter() - t0
    ok = worst[0] < 1.0 and worst[1] < 0.5 and 0.8 <= min(rmses) and max(rmses) <= 1.3 and elapsed < 120
    report(
        8,
        ok,
        f"rotation {worst[0]:.3f} deg, translation {worst[1]:.3f} mm, "
        f"RMSE [{min(rmses):.3f}, {max(rmses):.3f}] mm, {elapsed:.0f} s",
    )
    assert worst[0] < 1.0
    assert worst[1] < 0.5
    assert 0.8 <= min(rmses) and max(rmses) <= 1.3
    assert elapsed < 120


# -- 9 -------------------------------------------------------------------------


@pytest.mark.acceptance(9, "verdicts, margins and N_g are invariant to a common yaw (20 scenes)")
def test_frame_invariance():
    rng = np.random.default_rng(7)
    meshes = [cube(30.0), box(20.0, 30.0, 15.0), cylinder(20.0, 15.0), shaft(), cube(40.0)]
    cfg = PlannerConfig(max_rest_candidates=6)
    gripper = GripperSpec()
    worst = 0.0
    for s in range(20):
        mesh = meshes[s % len(meshes)]
        part = Part(mesh, 0.05)
        cavity = make_cavity(float(rng.integers(5, 40)), cfg)
        found = rest_candidates(part, cavity, cfg)
        pose, v = found[int(rng.integers(len(found)))]
        grasps = generate_grasps(mesh, gripper, 0.3, 40, s)
        n = count_feasible(mesh, pose, cavity, None, gripper, grasps)
        angle = float(rng.uniform(0.0, 2 * math.pi))
        Rz = rot_z(angle)
        turned = cavity.rotated_about_z(angle)
        pose2 = Pose(Rz @ pose.rotation, Rz @ pose.translation)
        v2 = spp_test(part, pose2, turned, cfg)
        n2 = count_feasible(mesh, pose2, turned, None, gripper, grasps)
        assert v2.kind is v.kind
        assert abs(v2.margin - v.margin) < 1e-6
        assert n2 == n
        worst = max(worst, abs(v2.margin - v.margin))
    report(9, True, f"largest margin change {worst:.2e}")


# -- 10 ------------------------------------------------------------------------


@pytest.mark.acceptance(10, "two plan runs with the same config and seed are byte-identical")
def test_plan_determinism(tmp_path):
    cfg_path = tmp_path / "run.toml"
    cfg_path.write_text(
        'object_mesh_path = "builtin:d"\nobject_mass = 12.0\nobject_id = "d"\nseed = 3\n'
        "[planner]\ndepth_min = 10.0\ndepth_max = 30.0\ndepth_step = 5.0\nmax_rest_candidates = 6\ngrasp_samples = 40\n"
    )
    outputs = []
    out = tmp_path / "out"
    for _ in range(2):
        assert cli.main(["plan", "--config", str(cfg_path), "--out", str(out)]) == 0
        outputs.append({name: (out / name).read_bytes() for name in ("plan.json", "sweep.csv")})
    same = outputs[0] == outputs[1]
    report(10, same, "plan.json and sweep.csv identical" if same else "outputs differ")
    assert same


# -- 11 ------------------------------------------------------------------------


@pytest.mark.acceptance(11, "45/45/45 edge elevations are rejected; equal-angle axes at acos(1/sqrt 3)")
def test_orientation_guard():
    with pytest.raises(InfeasibleOrientation):
        edge_elevations(ExplicitAngles(45.0, 45.0, 45.0))
    with pytest.raises(InfeasibleOrientation):
        build_cavity(20.0, orientation=ExplicitAngles(45.0, 45.0, 45.0))
    cavity = build_cavity(20.0, orientation=EqualAngle())
    polar = [math.acos(a[2]) for a in cavity.axes]
    err = max(abs(p - equal_angle_polar()) for p in polar)
    report(11, err <= 1e-9, f"axis angle from vertical {math.degrees(polar[0]):.9f} deg, error {err:.1e}")
    assert err <= 1e-9


# -- 12 ------------------------------------------------------------------------


@pytest.mark.acceptance(12, "success criterion uses closed 5 mm / 5 deg thresholds")
def test_success_criterion_boundaries():
    ref = Pose(axis_angle([0.3, -0.2, 0.9], 0.7), [12.0, -4.0, 30.0])
    crit = SuccessCriterion(5.0, 5.0)

    def moved(dt, deg):
        R = axis_angle([1.0, 2.0, 0.5], math.radians(deg)) @ ref.rotation
        return Pose(R, ref.translation + dt * np.array([0.6, 0.0, 0.8]))

    cases = {(5.0, 0.0): True, (0.0, 5.0): True, (5.0, 5.0): True, (5.001, 0.0): False, (0.0, 5.001): False}
    got = {c: check_pose(moved(*c), ref, crit).success for c in cases}
    report(12, got == cases, ", ".join(f"{c}->{'ok' if v else 'fail'}" for c, v in got.items()))
    assert got == cases
