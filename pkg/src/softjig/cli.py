"""``softjig`` command line: planning, stamp export, registration and reports."""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .cavity import build_stamp_tool
from .config import RunConfig, load_config
from .errors import ConfigError, Diverged, NoConsensus, NoStablePose, SoftJigError
from .geometry import Pose
from .grasps import count_feasible, generate_grasps
from .meshio import load_xyz, save_stl
from .planner import best_rest, make_cavity, optimize_depth, plan_from_sweep, sweep_depths
from .registration import register, shape_error
from .reports import (
    SuccessCriterion,
    aggregate,
    check_pose,
    dumps_json,
    load_verdicts,
    plan_to_dict,
    report_csv,
    sweep_csv,
    write_outputs,
)
from .stability import Part, spp_test

log = logging.getLogger("softjig")

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_INPUT = 3


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, lam=args.lam, output_dir=args.out)


def _part(cfg: RunConfig) -> Part:
    return Part(cfg.load_object(), cfg.mass_kg)


def _stl_bytes(mesh) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "m.stl"
        save_stl(mesh, p)
        return p.read_bytes()


def _depth(args, cfg: RunConfig) -> float:
    if args.depth is None:
        raise ConfigError("required for this command", "--depth")
    d = float(args.depth)
    if not cfg.planner.depth_min <= d <= cfg.planner.depth_max:
        raise ConfigError(f"depth {d:g} outside [{cfg.planner.depth_min:g}, {cfg.planner.depth_max:g}]", "--depth")
    return d


# -- commands ----------------------------------------------------------------


def cmd_plan(args) -> int:
    cfg = _config(args)
    part = _part(cfg)
    grasps = generate_grasps(part.mesh, cfg.gripper, cfg.planner.mu_finger, cfg.planner.grasp_samples, cfg.seed)
    plan = optimize_depth(part, cfg.planner, cfg.gripper, cfg.jig, grasps, cfg.seed)
    doc = plan_to_dict(plan, cfg.to_dict(), cfg.seed, len(grasps))
    files = {
        "plan.json": dumps_json(doc),
        "sweep.csv": sweep_csv(e.row() for e in plan.sweep),
        "stamp.stl": _stl_bytes(build_stamp_tool(plan.cavity, handle_length=cfg.jig.jig_thickness)),
        "config.toml": cfg.dumps(),
    }
    for p in write_outputs(cfg.output_dir, files):
        log.info("wrote %s", p)
    print(f"D* = {plan.best_depth:g} mm (lambda {plan.lam:g}), {plan.verdict_at_best.kind.value}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    part = _part(cfg)
    grasps = generate_grasps(part.mesh, cfg.gripper, cfg.planner.mu_finger, cfg.planner.grasp_samples, cfg.seed)
    evals = sweep_depths(part, cfg.planner, cfg.gripper, cfg.jig, grasps)
    plan = plan_from_sweep(evals, cfg.planner, cfg.jig)
    write_outputs(cfg.output_dir, {"sweep.csv": sweep_csv(e.row() for e in plan.sweep)})
    valid = [e for e in plan.sweep if e.valid]
    print(f"{len(valid)}/{len(plan.sweep)} depths stable; D* = {plan.best_depth:g} mm")
    if valid:
        m = np.array([e.margin for e in valid])
        n = np.array([e.grasp_count for e in valid])
        print(f"margin  min {m.min():.4f} max {m.max():.4f}")
        print(f"N_g     min {n.min()} max {n.max()}")
    return EXIT_OK


def cmd_stamp(args) -> int:
    cfg = _config(args)
    cavity = make_cavity(_depth(args, cfg), cfg.planner, cfg.jig)
    tool = build_stamp_tool(cavity, handle_length=cfg.jig.jig_thickness)
    write_outputs(cfg.output_dir, {"stamp.stl": _stl_bytes(tool)})
    print(f"stamp for depth {cavity.depth:g} mm: {len(tool.triangles)} triangles")
    return EXIT_OK


def _load_pose(path) -> Pose:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return Pose.from_dict(d.get("spp", d) if isinstance(d, dict) else d)


def cmd_stability(args) -> int:
    cfg = _config(args)
    part = _part(cfg)
    cavity = make_cavity(_depth(args, cfg), cfg.planner, cfg.jig)
    if args.pose:
        pose = _load_pose(args.pose)
        verdict = spp_test(part, pose, cavity, cfg.planner)
    else:
        pose, verdict = best_rest(part, cavity, cfg.planner)
    doc = {"depth": cavity.depth, "pose": pose.to_dict(), "verdict": verdict.to_dict()}
    text = dumps_json(doc)
    write_outputs(cfg.output_dir, {"stability.json": text})
    print(f"{verdict.kind.value} margin {verdict.margin:.6g}")
    return EXIT_OK


def cmd_grasps(args) -> int:
    cfg = _config(args)
    part = _part(cfg)
    grasps = generate_grasps(part.mesh, cfg.gripper, cfg.planner.mu_finger, cfg.planner.grasp_samples, cfg.seed)
    doc = {"seed": cfg.seed, "grasps": [g.to_dict() for g in grasps]}
    if args.depth is not None:
        cavity = make_cavity(_depth(args, cfg), cfg.planner, cfg.jig)
        pose, _ = best_rest(part, cavity, cfg.planner)
        doc["depth"] = cavity.depth
        doc["feasible_count"] = count_feasible(part.mesh, pose, cavity, cfg.jig, cfg.gripper, grasps)
    write_outputs(cfg.output_dir, {"grasps.json": dumps_json(doc)})
    extra = f", {doc['feasible_count']} feasible at {doc['depth']:g} mm" if "depth" in doc else ""
    print(f"{len(grasps)} antipodal grasps{extra}")
    return EXIT_OK


def cmd_register(args) -> int:
    cfg = _config(args)
    source = load_xyz(args.source)
    files = {}
    if args.target:
        target = load_xyz(args.target)
        res = register(source, target, cfg.registration, cfg.seed)
    else:
        cavity = make_cavity(_depth(args, cfg), cfg.planner, cfg.jig)
        res = shape_error(source, cavity, cfg.registration, cfg.seed)
    files["register.json"] = dumps_json({"seed": cfg.seed, "config": cfg.to_dict(), "result": res.to_dict()})
    if args.dump_aligned:
        buf = io.StringIO()
        np.savetxt(buf, res.transform.apply(source.points), fmt="%.6f")
        files["aligned.xyz"] = buf.getvalue()
    write_outputs(cfg.output_dir, files)
    flag = "within" if res.within_reference else "above"
    print(f"rmse {res.rmse:.4f} mm ({flag} the 4.4 mm reference), inliers {res.inlier_fraction:.3f}")
    return EXIT_OK


def cmd_check_pose(args) -> int:
    crit = SuccessCriterion(args.position_tol, args.orientation_tol)
    res = check_pose(_load_pose(args.measured), _load_pose(args.reference), crit)
    doc = {"object_id": args.object_id or "", **res.to_dict()}
    if args.out:
        write_outputs(args.out, {f"{args.name}.json": dumps_json(doc)})
    print(dumps_json(doc), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = aggregate(load_verdicts(args.verdicts))
    text = report_csv(rows)
    write_outputs(args.out or ".", {"report.csv": text})
    print(text, end="")
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="softjig", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--lambda", dest="lam", type=float, help="override planner lambda")
    depth = argparse.ArgumentParser(add_help=False)
    depth.add_argument("--depth", type=float, help="stamping depth in mm")

    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", parents=[common], help="optimize the stamping depth").set_defaults(func=cmd_plan)
    sub.add_parser("sweep", parents=[common], help="depth sweep table only").set_defaults(func=cmd_sweep)
    sub.add_parser("stamp", parents=[common, depth], help="export the stamp tool STL").set_defaults(func=cmd_stamp)
    p = sub.add_parser("stability", parents=[common, depth], help="stability verdict at one depth")
    p.add_argument("--pose", help="pose JSON (rotation, translation); default: best rest pose")
    p.set_defaults(func=cmd_stability)
    sub.add_parser("grasps", parents=[common, depth], help="antipodal grasp candidates").set_defaults(func=cmd_grasps)
    p = sub.add_parser("register", parents=[common, depth], help="shape error of a measured cavity cloud")
    p.add_argument("--source", required=True, help="measured cloud (.xyz, mm)")
    p.add_argument("--target", help="target cloud; default: ideal cavity at --depth")
    p.add_argument("--dump-aligned", action="store_true", help="also write the transformed source cloud")
    p.set_defaults(func=cmd_register)
    p = sub.add_parser("check-pose", help="compare a measured pose with the planned one")
    p.add_argument("--measured", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--object-id", default="")
    p.add_argument("--position-tol", type=float, default=5.0, help="mm")
    p.add_argument("--orientation-tol", type=float, default=5.0, help="degrees")
    p.add_argument("--out", help="directory to store the verdict file")
    p.add_argument("--name", default="verdict", help="verdict file stem")
    p.set_defaults(func=cmd_check_pose)
    p = sub.add_parser("report", help="per-object success rates from verdict files")
    p.add_argument("verdicts", help="directory of verdict JSON files")
    p.add_argument("--out", help="directory for report.csv (default: current)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NoStablePose as exc:
        print(f"softjig: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NoConsensus, Diverged) as exc:
        print(f"softjig: registration failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"softjig: config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError, json.JSONDecodeError, KeyError) as exc:
        print(f"softjig: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SoftJigError as exc:
        print(f"softjig: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
