import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from softjig import cli
from softjig.cavity import EqualAngle, ExplicitAngles
from softjig.config import RunConfig, load_config, parse_config
from softjig.errors import ConfigError, NoStablePose
from softjig.geometry import Pose, axis_angle
from softjig.meshio import save_stl
from softjig.reports import SuccessCriterion, aggregate, check_pose, dumps_json, load_verdicts, report_csv, sweep_csv, write_outputs
from softjig.shapes import box

SMALL_PLAN = "[planner]\ndepth_min = 10.0\ndepth_max = 30.0\ndepth_step = 10.0\nmax_rest_candidates = 4\ngrasp_samples = 20\n"


# -- configuration -------------------------------------------------------------


def test_defaults_and_overrides(tmp_path):
    cfg = parse_config("", tmp_path)
    assert cfg.planner.lam == 0.5
    assert cfg.mass_kg == pytest.approx(0.045)
    assert isinstance(cfg.planner.orientation, EqualAngle)
    assert cfg.output_dir == str((tmp_path / "out").resolve())
    moved = cfg.with_overrides(seed=4, lam=0.25, output_dir=tmp_path / "x")
    assert (moved.seed, moved.planner.lam) == (4, 0.25)
    with pytest.raises(ConfigError) as err:
        cfg.with_overrides(lam=2.0)
    assert err.value.field == "--lambda"


@pytest.mark.parametrize(
    "text,field,line",
    [
        ("seed = 1\n[planner]\nlambda = 1.5\n", "planner.lambda", 3),
        ("[planner]\norientation = [45.0, 45.0, 45.0]\n", "planner.orientation", 2),
        ("[planner]\ndepth_max = 50.0\n", "planner.depth_max", 2),
        ("[jig]\nsurface_hieght = 1.0\n", "jig.surface_hieght", 2),
        ("colour = 'red'\n", "colour", 1),
        ("object_mass = -3\n", "object_mass", 1),
        ("seed = 'x'\n", "seed", 1),
        ("object_mesh_path = 'missing.stl'\n", "object_mesh_path", 1),
        ("object_mesh_path = 'builtin:teapot'\n", "object_mesh_path", 1),
        ("jig = 3\n", "jig", 1),
    ],
)
def test_invalid_configs_are_located(tmp_path, text, field, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text, tmp_path)
    assert err.value.field == field
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_malformed_toml_reports_line(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_config("seed = 1\n[planner\n", tmp_path)
    assert err.value.line == 2


def test_explicit_orientation_and_mesh_path(tmp_path):
    save_stl(box(20, 20, 20), tmp_path / "part.stl")
    deg = math.degrees(math.asin(1 / math.sqrt(3)))
    cfg = parse_config(f"object_mesh_path = 'part.stl'\n[planner]\norientation = [{deg!r}, {deg!r}, {deg!r}]\n", tmp_path)
    assert isinstance(cfg.planner.orientation, ExplicitAngles)
    assert cfg.object_mesh_path == str((tmp_path / "part.stl").resolve())
    assert cfg.load_object().volume() == pytest.approx(8000.0, rel=1e-6)


def test_dump_round_trip(tmp_path):
    cfg = parse_config("seed = 9\nobject_id = 'g'\n[planner]\nlambda = 0.3\nmoment_scale = 12.5\n", tmp_path)
    again = parse_config(cfg.dumps(), tmp_path)
    assert again.dumps() == cfg.dumps()
    assert again.planner.moment_scale == 12.5 and again.seed == 9


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


# -- success criterion and reports ----------------------------------------------


@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0), st.integers(0, 10_000))
def test_check_pose_is_symmetric(dt, deg, seed):
    rng = np.random.default_rng(seed)
    ref = Pose(axis_angle(rng.normal(size=3), rng.uniform(0, math.pi)), rng.uniform(-50, 50, 3))
    d = rng.normal(size=3)
    meas = Pose(axis_angle(rng.normal(size=3), math.radians(deg)) @ ref.rotation, ref.translation + dt * d / np.linalg.norm(d))
    a, b = check_pose(meas, ref), check_pose(ref, meas)
    assert a.success == b.success
    assert a.translation_error == pytest.approx(dt, abs=1e-9)
    assert a.rotation_error == pytest.approx(deg, abs=1e-5)
    assert a.success == (dt <= 5.0 + 1e-9 and a.rotation_error <= 5.0 + 1e-9)


def test_criterion_validation():
    with pytest.raises(ValueError):
        SuccessCriterion(0.0, 5.0)


def test_aggregate_rates():
    verdicts = [{"object_id": "g", "success": i < 18} for i in range(20)] + [{"object_id": "a", "success": True}]
    rows = aggregate(verdicts)
    assert [r.object_id for r in rows] == ["a", "g"]
    assert rows[1].rate == 90.0 and rows[1].name == "Shaft"
    assert report_csv(rows).splitlines()[2] == "g,Shaft,20,18,90.0"
    with pytest.raises(ValueError):
        aggregate([{"object_id": "a"}])


def test_json_and_csv_writers():
    text = dumps_json({"b": np.float64(1.5), "a": [np.int64(2), float("nan"), np.bool_(True)]})
    assert json.loads(text) == {"a": [2, None, True], "b": 1.5}
    assert text.index('"a"') < text.index('"b"')
    csv = sweep_csv([{"depth": 1.0, "margin": float("nan"), "grasp_count": 0, "margin_norm": 0.5, "count_norm": 1.0, "score": float("-inf"), "valid": False}])
    assert csv.splitlines()[1] == "1.0,nan,0,0.5,1.0,-inf,0"


def test_write_outputs_is_all_or_nothing(tmp_path):
    out = tmp_path / "o"
    write_outputs(out, {"a.txt": "x", "b.bin": b"\x00"})
    assert (out / "a.txt").read_text() == "x"
    with pytest.raises(TypeError):
        write_outputs(out, {"c.txt": "y", "d.txt": 3})
    assert not (out / "c.txt").exists()
    assert {p.name for p in out.iterdir()} == {"a.txt", "b.bin"}


def test_load_verdicts_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_verdicts(tmp_path / "none")
    with pytest.raises(FileNotFoundError):
        load_verdicts(tmp_path)


# -- command line ---------------------------------------------------------------


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text("object_mesh_path = 'builtin:cube30'\nobject_mass = 50.0\n" + SMALL_PLAN)
    return p


def test_plan_writes_outputs(small_config, tmp_path, capsys):
    out = tmp_path / "plan"
    assert cli.main(["plan", "--config", str(small_config), "--out", str(out), "--lambda", "0.4"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["config.toml", "plan.json", "stamp.stl", "sweep.csv"]
    doc = json.loads((out / "plan.json").read_text())
    assert doc["lambda"] == 0.4 and doc["config"]["planner"]["lambda"] == 0.4
    assert doc["ddp"]["translation"][2] - doc["spp"]["translation"][2] == 2 * doc["best_depth"]
    assert len(doc["sweep"]) == 3
    # the emitted config reproduces the run
    out2 = tmp_path / "plan2"
    assert cli.main(["plan", "--config", str(out / "config.toml"), "--out", str(out2)]) == 0
    assert (out2 / "sweep.csv").read_bytes() == (out / "sweep.csv").read_bytes()
    assert "D* =" in capsys.readouterr().out


def test_depth_commands(small_config, tmp_path):
    out = tmp_path / "o"
    base = ["--config", str(small_config), "--out", str(out)]
    assert cli.main(["stamp", *base, "--depth", "20"]) == 0
    assert cli.main(["stability", *base, "--depth", "20"]) == 0
    assert json.loads((out / "stability.json").read_text())["verdict"]["kind"] in ("WrenchStable", "GeometricStable")
    assert cli.main(["grasps", *base, "--depth", "20"]) == 0
    doc = json.loads((out / "grasps.json").read_text())
    assert 0 <= doc["feasible_count"] <= len(doc["grasps"])
    assert cli.main(["stamp", *base]) == 3
    assert cli.main(["stamp", *base, "--depth", "99"]) == 3


def test_register_and_check_pose(tmp_path):
    from softjig.cavity import build_cavity, cavity_point_cloud
    from softjig.meshio import save_xyz

    save_xyz(cavity_point_cloud(build_cavity(20.0), 1.0), tmp_path / "scan.xyz")
    out = tmp_path / "r"
    assert cli.main(["register", "--source", str(tmp_path / "scan.xyz"), "--depth", "20", "--out", str(out), "--dump-aligned"]) == 0
    res = json.loads((out / "register.json").read_text())["result"]
    # a lattice scan matched to a lattice target can settle one in-cell offset away
    assert res["rmse"] < 0.5 and res["within_reference_rmse"]
    assert (out / "aligned.xyz").exists()

    ref = Pose(np.eye(3), [0.0, 0.0, 10.0])
    (tmp_path / "ref.json").write_text(json.dumps(ref.to_dict()))
    (tmp_path / "meas.json").write_text(json.dumps(Pose(np.eye(3), [0.0, 5.0, 10.0]).to_dict()))
    vdir = tmp_path / "verdicts"
    args = ["check-pose", "--measured", str(tmp_path / "meas.json"), "--reference", str(tmp_path / "ref.json"), "--object-id", "g"]
    assert cli.main([*args, "--out", str(vdir), "--name", "t1"]) == 0
    assert json.loads((vdir / "t1.json").read_text())["success"] is True
    assert cli.main(["report", str(vdir), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "report.csv").read_text().splitlines()[1] == "g,Shaft,1,1,100.0"


def test_exit_codes(tmp_path, monkeypatch, small_config):
    bad = tmp_path / "bad.toml"
    bad.write_text("[planner]\nlambda = 1.5\n")
    assert cli.main(["plan", "--config", str(bad), "--out", str(tmp_path / "x")]) == 3
    assert not (tmp_path / "x").exists()
    assert cli.main(["plan", "--config", str(tmp_path / "missing.toml")]) == 3
    assert cli.main(["report", str(tmp_path / "nothing")]) == 3

    def no_pose(*a, **k):
        raise NoStablePose("nothing rests here")

    monkeypatch.setattr(cli, "optimize_depth", no_pose)
    assert cli.main(["plan", "--config", str(small_config), "--out", str(tmp_path / "y")]) == 2
    assert not (tmp_path / "y").exists()


def test_builtin_config_is_default():
    assert RunConfig().object_mesh_path == "builtin:shaft"
    assert RunConfig().load_object().is_watertight()
