"""Run configuration: TOML loading with located diagnostics, and resolved dumps.

Layout::

    seed = 0
    output_dir = "out"
    object_mesh_path = "builtin:shaft"   # or an STL/OBJ path, relative to this file
    object_mass = 45.0                   # grams
    object_id = "g"

    [jig]           # JigSpec fields
    [gripper]       # GripperSpec fields
    [planner]       # PlannerConfig fields; "lambda" for the trade-off weight
    [registration]  # RegistrationParams fields
"""

from __future__ import annotations

import dataclasses
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .cavity import EqualAngle, ExplicitAngles, JigSpec, edge_elevations
from .errors import ConfigError, InfeasibleOrientation
from .geometry import TriMesh
from .grasps import GripperSpec
from .meshio import load_mesh
from .planner import PlannerConfig
from .registration import RegistrationParams
from .shapes import builtin_mesh

BUILTIN = "builtin:"
TOP_KEYS = ("seed", "output_dir", "object_mesh_path", "object_mass", "object_id")
SECTIONS = ("jig", "gripper", "planner", "registration")
# config keys that differ from the dataclass attribute
PLANNER_ALIASES = {"lambda": "lam"}


@dataclass(frozen=True)
class RunConfig:
    object_mesh_path: str = BUILTIN + "shaft"
    object_mass: float = 45.0  # g
    object_id: str = ""
    jig: JigSpec = field(default_factory=JigSpec)
    gripper: GripperSpec = field(default_factory=GripperSpec)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    registration: RegistrationParams = field(default_factory=RegistrationParams)
    seed: int = 0
    output_dir: str = "out"

    @property
    def mass_kg(self) -> float:
        return self.object_mass / 1000.0

    def load_object(self) -> TriMesh:
        if self.object_mesh_path.startswith(BUILTIN):
            return builtin_mesh(self.object_mesh_path[len(BUILTIN):])
        return load_mesh(self.object_mesh_path)

    def with_overrides(self, seed=None, lam=None, output_dir=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        if lam is not None:
            try:
                cfg = dataclasses.replace(cfg, planner=dataclasses.replace(cfg.planner, lam=float(lam)))
            except ValueError as exc:
                raise ConfigError(str(exc), "--lambda") from None
        if output_dir is not None:
            cfg = dataclasses.replace(cfg, output_dir=str(Path(output_dir).resolve()))
        return cfg

    def to_dict(self) -> dict:
        planner = _section_dict(self.planner)
        planner["lambda"] = planner.pop("lam")
        orient = self.planner.orientation
        planner["orientation"] = "equal_angle" if isinstance(orient, EqualAngle) else list(orient.angles)
        planner["apex_xy"] = [float(v) for v in self.planner.apex_xy]
        if planner["moment_scale"] is None:
            planner["moment_scale"] = "bounding_sphere"
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "object_mesh_path": self.object_mesh_path,
            "object_mass": self.object_mass,
            "object_id": self.object_id,
            "jig": _section_dict(self.jig),
            "gripper": _section_dict(self.gripper),
            "planner": dict(sorted(planner.items())),
            "registration": _section_dict(self.registration),
        }

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _section_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def _line_of(text: str, section: str | None, key: str) -> int | None:
    """1-based line where ``key`` is assigned (inside ``[section]`` when given)."""
    current = None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for no, line in enumerate(text.splitlines(), 1):
        head = re.match(r"^\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            continue
        if current == section and pat.match(line):
            return no
    if section is not None:
        for no, line in enumerate(text.splitlines(), 1):
            if re.match(rf"^\s*\[{re.escape(section)}\]", line):
                return no
    return None


def _build(cls, values: dict, section: str, text: str, aliases=None, convert=None):
    aliases = aliases or {}
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        attr = aliases.get(key, key)
        if attr not in names or attr in aliases.values() and key not in aliases:
            raise ConfigError(f"unknown key '{key}'", f"{section}.{key}", _line_of(text, section, key))
        if convert and key in convert:
            try:
                value = convert[key](value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc), f"{section}.{key}", _line_of(text, section, key)) from None
        kwargs[attr] = value
    try:
        return cls(**kwargs)
    except InfeasibleOrientation as exc:
        raise ConfigError(str(exc), f"{section}.orientation", _line_of(text, section, "orientation")) from None
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        # locate the offending key by name when the message mentions one
        key = next((k for k in values if re.search(rf"\b{re.escape(aliases.get(k, k))}\b|\b{re.escape(k)}\b", msg)), None)
        fld = f"{section}.{key}" if key else section
        raise ConfigError(msg, fld, _line_of(text, section, key) if key else _line_of(text, section, "")) from None


def _orientation(value):
    if value in ("equal_angle", "EqualAngle"):
        return EqualAngle()
    if isinstance(value, list) and len(value) == 3:
        mode = ExplicitAngles(*value)
        edge_elevations(mode)
        return mode
    raise ValueError("orientation must be \"equal_angle\" or three elevation angles in degrees")


def _moment_scale(value):
    if value in ("bounding_sphere", "BoundingSphereRadius"):
        return None
    return float(value)


PLANNER_CONVERT = {
    "orientation": _orientation,
    "moment_scale": _moment_scale,
    "apex_xy": lambda v: tuple(float(x) for x in v),
}


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    """Validate TOML ``text``; relative paths resolve against ``base_dir``."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", None, int(m.group(1)) if m else None) from None
    base_dir = Path(base_dir)
    for key in raw:
        if key not in TOP_KEYS and key not in SECTIONS:
            raise ConfigError(f"unknown key '{key}'", key, _line_of(text, None, key))
    for sec in SECTIONS:
        if sec in raw and not isinstance(raw[sec], dict):
            raise ConfigError("expected a table", sec, _line_of(text, None, sec))
    jig = _build(JigSpec, raw.get("jig", {}), "jig", text)
    gripper = _build(GripperSpec, raw.get("gripper", {}), "gripper", text)
    planner = _build(PlannerConfig, raw.get("planner", {}), "planner", text, PLANNER_ALIASES, PLANNER_CONVERT)
    registration = _build(RegistrationParams, raw.get("registration", {}), "registration", text)
    if planner.depth_max > jig.jig_thickness:
        raise ConfigError(
            f"depth_max {planner.depth_max:g} exceeds jig_thickness {jig.jig_thickness:g}",
            "planner.depth_max",
            _line_of(text, "planner", "depth_max"),
        )

    def top(key, default, kind):
        if key not in raw:
            return default
        value = raw[key]
        ok = isinstance(value, kind) and not isinstance(value, bool)
        if not ok:
            raise ConfigError(f"expected {kind.__name__ if isinstance(kind, type) else 'number'}", key, _line_of(text, None, key))
        return value

    mass = float(top("object_mass", 45.0, (int, float)))
    if not mass > 0:
        raise ConfigError("mass must be positive", "object_mass", _line_of(text, None, "object_mass"))
    seed = top("seed", 0, int)
    mesh = top("object_mesh_path", BUILTIN + "shaft", str)
    if not mesh.startswith(BUILTIN):
        path = (base_dir / mesh).resolve()
        if not path.is_file():
            raise ConfigError(f"mesh file not found: {path}", "object_mesh_path", _line_of(text, None, "object_mesh_path"))
        mesh = str(path)
    else:
        try:
            builtin_mesh(mesh[len(BUILTIN):])
        except ValueError as exc:
            raise ConfigError(str(exc), "object_mesh_path", _line_of(text, None, "object_mesh_path")) from None
    out = str((base_dir / top("output_dir", "out", str)).resolve())
    return RunConfig(mesh, mass, top("object_id", "", str), jig, gripper, planner, registration, seed, out)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror or exc}", str(path)) from None
    return parse_config(text, path.parent)
