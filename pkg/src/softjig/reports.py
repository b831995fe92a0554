"""Success-criterion checks, verdict aggregation and report writers."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .geometry import Pose, rotation_angle
from .shapes import TARGET_OBJECTS

# Absolute slack on the closed thresholds; absorbs round-off in the geodesic angle.
THRESHOLD_SLACK = 1e-9


@dataclass(frozen=True)
class SuccessCriterion:
    position_tolerance: float = 5.0  # mm
    orientation_tolerance: float = 5.0  # degrees

    def __post_init__(self):
        if not (self.position_tolerance > 0 and self.orientation_tolerance > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class PoseCheck:
    success: bool
    translation_error: float  # mm
    rotation_error: float  # degrees

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "translation_error_mm": self.translation_error,
            "rotation_error_deg": self.rotation_error,
        }


def check_pose(measured: Pose, reference: Pose, criterion: SuccessCriterion | None = None) -> PoseCheck:
    """Closed-threshold comparison of a measured part pose against the planned one."""
    criterion = criterion or SuccessCriterion()
    dt = float(np.linalg.norm(measured.translation - reference.translation))
    dr = math.degrees(rotation_angle(reference.rotation.T @ measured.rotation))
    ok = dt <= criterion.position_tolerance + THRESHOLD_SLACK and dr <= criterion.orientation_tolerance + THRESHOLD_SLACK
    return PoseCheck(bool(ok), dt, dr)


@dataclass(frozen=True)
class SuccessRate:
    object_id: str
    name: str
    trials: int
    successes: int

    @property
    def rate(self) -> float:
        return 100.0 * self.successes / self.trials if self.trials else 0.0


def aggregate(verdicts: Iterable[Mapping]) -> list[SuccessRate]:
    """One row per object id, sorted by id."""
    counts: dict[str, list[int]] = {}
    for v in verdicts:
        oid = str(v.get("object_id", ""))
        if "success" not in v:
            raise ValueError("verdict record lacks a 'success' field")
        c = counts.setdefault(oid, [0, 0])
        c[0] += 1
        c[1] += bool(v["success"])
    rows = []
    for oid in sorted(counts):
        obj = TARGET_OBJECTS.get(oid)
        rows.append(SuccessRate(oid, obj.kind if obj else "", counts[oid][0], counts[oid][1]))
    return rows


def load_verdicts(directory) -> list[dict]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix == ".json")
    if not files:
        raise FileNotFoundError(f"no verdict files (*.json) in {directory}")
    out = []
    for p in files:
        with open(p, encoding="utf-8") as fh:
            rec = json.load(fh)
        out.extend(rec if isinstance(rec, list) else [rec])
    return out


# -- serialization -----------------------------------------------------------


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def plan_to_dict(plan, config: dict, seed: int, grasp_total: int) -> dict:
    return {
        "config": config,
        "seed": seed,
        "lambda": plan.lam,
        "best_depth": plan.best_depth,
        "spp": plan.spp.to_dict(),
        "ddp": plan.ddp.to_dict(),
        "stamp_transform": plan.stamp_transform.to_dict(),
        "cavity": plan.cavity.to_dict(),
        "verdict_at_best": plan.verdict_at_best.to_dict(),
        "grasp_candidates": grasp_total,
        "sweep": [e.row() for e in plan.sweep],
    }


SWEEP_COLUMNS = ("depth", "margin", "grasp_count", "margin_norm", "count_norm", "score", "valid")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("-inf" if v < 0 else "nan" if v != v else "inf")
    return str(v)


def sweep_csv(rows: Iterable[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def report_csv(rows: Iterable[SuccessRate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("object_id", "name", "trials", "successes", "success_rate_pct"))
    for r in rows:
        w.writerow((r.object_id, r.name, r.trials, r.successes, f"{r.rate:.1f}"))
    return buf.getvalue()


def write_outputs(out_dir, files: Mapping[str, str | bytes]) -> list[Path]:
    """Write every file or none: stage in a temp dir, then move into place."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    with tempfile.TemporaryDirectory(dir=out_dir, prefix=".staging-") as tmp:
        for name, data in files.items():
            p = Path(tmp) / name
            if isinstance(data, bytes):
                p.write_bytes(data)
            else:
                p.write_text(data, encoding="utf-8")
            staged.append((p, out_dir / name))
        for src, dst in staged:
            os.replace(src, dst)
    return [dst for _, dst in staged]
