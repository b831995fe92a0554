"""STL/OBJ mesh and xyz point-cloud ingestion and export."""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from .geometry import PointCloud, TriMesh

log = logging.getLogger(__name__)


def _indexed(triangle_corners: np.ndarray, source: str) -> TriMesh:
    corners = np.asarray(triangle_corners, dtype=float).reshape(-1, 3, 3)
    area = 0.5 * np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)
    bad = area < 1e-12
    if bad.any():
        log.warning("%s: dropped %d zero-area facet(s)", source, int(bad.sum()))
        corners = corners[~bad]
    flat = corners.reshape(-1, 3)
    vertices, inverse = np.unique(flat, axis=0, return_inverse=True)
    return TriMesh(vertices, inverse.reshape(-1, 3))


def _is_binary_stl(data: bytes) -> bool:
    if len(data) < 84:
        return False
    (count,) = struct.unpack("<I", data[80:84])
    if 84 + 50 * count == len(data):
        return True
    return not data.lstrip()[:5].lower() == b"solid"


def load_stl(path) -> TriMesh:
    path = Path(path)
    data = path.read_bytes()
    if _is_binary_stl(data):
        (count,) = struct.unpack("<I", data[80:84])
        dtype = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
        rec = np.frombuffer(data, dtype=dtype, count=count, offset=84)
        return _indexed(rec["v"].astype(float), str(path))
    corners = []
    for line in data.decode("ascii", errors="replace").splitlines():
        parts = line.split()
        if parts and parts[0] == "vertex":
            corners.append([float(x) for x in parts[1:4]])
    if len(corners) % 3:
        raise ValueError(f"{path}: vertex count not a multiple of 3")
    return _indexed(np.array(corners), str(path))


def load_obj(path) -> TriMesh:
    path = Path(path)
    vertices, faces = [], []
    skipped: dict[str, int] = {}
    for line in path.read_text(errors="replace").splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            vertices.append([float(x) for x in parts[1:4]])
        elif tag == "f" and len(parts) == 4:
            idx = []
            for token in parts[1:]:
                i = int(token.split("/")[0])
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            faces.append(idx)
        else:
            key = "f (non-triangular)" if tag == "f" else tag
            skipped[key] = skipped.get(key, 0) + 1
    for key, n in sorted(skipped.items()):
        log.warning("%s: ignored %d '%s' record(s)", path, n, key)
    V = np.array(vertices, dtype=float)
    F = np.array(faces, dtype=np.int64).reshape(-1, 3)
    return _indexed(V[F], str(path))


def load_mesh(path) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".stl":
        return load_stl(path)
    if suffix == ".obj":
        return load_obj(path)
    raise ValueError(f"unsupported mesh format: {suffix or path}")


def save_stl(mesh: TriMesh, path, header: str = "softjig") -> None:
    c = mesh.corners.astype("<f4")
    n = mesh.face_normals.astype("<f4")
    dtype = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec = np.zeros(len(c), dtype=dtype)
    rec["normal"] = n
    rec["v"] = c
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii")[:80].ljust(80, b" "))
        fh.write(struct.pack("<I", len(c)))
        fh.write(rec.tobytes())


def save_obj(mesh: TriMesh, path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_xyz(path) -> PointCloud:
    pts = np.loadtxt(path, dtype=float, ndmin=2)
    if pts.shape[1] < 3:
        raise ValueError(f"{path}: expected 3 columns (x y z)")
    return PointCloud(pts[:, :3])


def save_xyz(cloud: PointCloud, path) -> None:
    np.savetxt(path, cloud.points, fmt="%.9g")
