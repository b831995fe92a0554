"""Rigid point-cloud registration (sample consensus + ICP) and shape error."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cavity import CavitySpec, cavity_point_cloud
from .errors import Diverged, NoConsensus
from .geometry import PointCloud, Pose, rotation_angle

REFERENCE_RMSE = 4.4  # mm, largest residual observed on the physical jig
TARGET_SPACING = 0.5  # mm, pitch of the sampled target surface
MIN_INLIER_FRACTION = 0.1
ANGLE_SCALE = 0.1  # descriptor weight of the |cos| normal-vs-radial term
EXACT_FIT = 1e-12  # mm, residual below which ICP has nothing left to fit


@dataclass(frozen=True)
class RegistrationParams:
    ransac_iterations: int = 2000
    ransac_sample_size: int = 3
    inlier_threshold: float = 2.0
    icp_max_iterations: int = 100
    icp_convergence: float = 1e-4
    max_correspondence: float = 10.0
    feature_neighbors: int = 64
    score_subset: int = 400

    def __post_init__(self):
        if self.ransac_sample_size < 3:
            raise ValueError("ransac_sample_size must be at least 3")
        for name in ("ransac_iterations", "icp_max_iterations", "feature_neighbors", "score_subset"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("inlier_threshold", "icp_convergence", "max_correspondence"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: Pose
    rmse: float
    inlier_fraction: float
    iterations_used: int

    @property
    def within_reference(self) -> bool:
        return self.rmse <= REFERENCE_RMSE

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "rmse": float(self.rmse),
            "inlier_fraction": float(self.inlier_fraction),
            "iterations_used": int(self.iterations_used),
            "within_reference_rmse": bool(self.within_reference),
            "reference_rmse": REFERENCE_RMSE,
        }


def kabsch(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Least-squares rigid transform taking ``src`` rows onto ``dst`` rows."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return Pose(R, cd - R @ cs)


def _features(P: np.ndarray, k: int):
    """Per-point (distance to centroid, |cos| normal-vs-radial, surface variation)."""
    k = min(k, len(P))
    _, idx = cKDTree(P).query(P, k=k)
    idx = np.asarray(idx).reshape(len(P), -1)
    nb = P[idx] - P[idx].mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb) / max(k, 1)
    w, v = np.linalg.eigh(cov)
    normal = v[:, :, 0]
    variation = w[:, 0] / np.maximum(w.sum(axis=1), 1e-300)
    r = P - P.mean(axis=0)
    dist = np.linalg.norm(r, axis=1)
    cosang = np.abs(np.einsum("ij,ij->i", normal, r)) / np.maximum(dist, 1e-12)
    return dist, cosang, variation


def _curvature_bin(variation: np.ndarray, bins: int = 4) -> np.ndarray:
    """Quantile bin of the surface variation within its own cloud.

    Ranks rather than absolute values keep the bins comparable between a
    noisy measurement and a clean model.
    """
    rank = np.argsort(np.argsort(variation, kind="stable"), kind="stable")
    return (bins * rank) // len(variation)


def _inlier_count(pose: Pose, S: np.ndarray, tree: cKDTree, thr: float) -> int:
    d, _ = tree.query(pose.apply(S), distance_upper_bound=thr)
    return int(np.sum(np.isfinite(d)))


def _inlier_residual(pose: Pose, S: np.ndarray, tree: cKDTree, thr: float) -> float:
    d, _ = tree.query(pose.apply(S), distance_upper_bound=thr)
    d = d[np.isfinite(d)]
    return float(np.sqrt(np.mean(d**2))) if len(d) else math.inf


def _consensus(source: PointCloud, target: PointCloud, params: RegistrationParams, seed: int):
    S, T = source.points, target.points
    n = params.ransac_sample_size
    if len(S) < n or len(T) < n:
        raise ValueError(f"both clouds need at least {n} points")
    rng = np.random.default_rng(seed)
    thr = params.inlier_threshold
    ds, cs, vs = _features(S, params.feature_neighbors)
    dt, ct, vt = _features(T, params.feature_neighbors)
    bs, bt = _curvature_bin(vs), _curvature_bin(vt)
    # candidate matches: nearest targets in (distance, angle) descriptor space
    ftree = cKDTree(np.column_stack([dt / thr, ct / ANGLE_SCALE]))
    kc = min(24, len(T))
    _, cand = ftree.query(np.column_stack([ds / thr, cs / ANGLE_SCALE]), k=kc)
    cand = np.asarray(cand).reshape(len(S), -1)
    ok = np.abs(bt[cand] - bs[:, None]) <= 1
    ttree = cKDTree(T)
    sub = S if len(S) <= params.score_subset else S[rng.choice(len(S), params.score_subset, replace=False)]
    min_sep = 0.1 * float(np.max(np.ptp(S, axis=0)))
    hyps = []
    for _ in range(params.ransac_iterations):
        pick = rng.choice(len(S), n, replace=False)
        src = S[pick]
        if min(np.linalg.norm(src[i] - src[j]) for i in range(n) for j in range(i + 1, n)) < min_sep:
            continue
        chosen = []
        for i in pick:
            opts = cand[i][ok[i]]
            if len(opts) == 0:
                break
            # keep only targets consistent with the pairwise distances chosen so far
            for t_prev, s_prev in zip(chosen, src):
                dd = np.abs(np.linalg.norm(T[opts] - T[t_prev], axis=1) - np.linalg.norm(S[i] - s_prev))
                opts = opts[dd <= 2 * thr]
                if len(opts) == 0:
                    break
            if len(opts) == 0:
                break
            chosen.append(int(opts[rng.integers(len(opts))]))
        if len(chosen) < n:
            continue
        pose = kabsch(src, T[chosen])
        hyps.append((_inlier_count(pose, sub, ttree, thr), pose))
    hyps += [(_inlier_count(p, sub, ttree, thr), p) for p in _principal_axis_poses(S, T)]
    top = max(h[0] for h in hyps)
    # equal counts are common (every near fit of a clean cloud scores 100%); break ties on residual
    ranked = sorted(
        ((score, _inlier_residual(pose, sub, ttree, thr), pose) for score, pose in hyps if score >= 0.5 * top),
        key=lambda h: (-h[0], h[1]),
    )
    reps: list[Pose] = []
    for _, _, pose in ranked:
        if len(reps) >= 12:
            break
        if all(rotation_angle(pose.rotation @ r.rotation.T) > math.radians(10) for r in reps):
            reps.append(pose)
    refined = []
    for pose in reps:
        options = [
            _refit(pose, S, T, ttree, thr),
            _refit(_refit(pose, S, T, ttree, params.max_correspondence, rounds=15), S, T, ttree, thr),
        ]
        refined += [(_inlier_count(p, S, ttree, thr), _inlier_residual(p, S, ttree, thr), p) for p in options]
    best_score = max(h[0] for h in refined)
    near = sorted((h for h in refined if h[0] >= 0.98 * best_score), key=lambda h: (-h[0], h[1]))
    # one representative per distinct rotation, then (symmetric targets) the least rotation
    modes: list[tuple] = []
    for h in near:
        if all(rotation_angle(h[2].rotation @ m[2].rotation.T) > math.radians(10) for m in modes):
            modes.append(h)
    score, _, best = min(modes, key=lambda h: rotation_angle(h[2].rotation))
    return best, score / len(S)


def _refit(pose: Pose, S, T, tree: cKDTree, thr: float, rounds: int = 5) -> Pose:
    """Re-estimate from all inlier correspondences a few times."""
    for _ in range(rounds):
        d, j = tree.query(pose.apply(S), distance_upper_bound=thr)
        m = np.isfinite(d)
        if m.sum() < 3:
            break
        pose = kabsch(S[m], T[j[m]])
    return pose


def _principal_axis_poses(S: np.ndarray, T: np.ndarray) -> list[Pose]:
    """Centroid and principal-axis alignments (the four proper sign choices)."""
    cs, ct = S.mean(axis=0), T.mean(axis=0)
    _, _, Vs = np.linalg.svd(S - cs, full_matrices=False)
    _, _, Vt = np.linalg.svd(T - ct, full_matrices=False)
    out = []
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        A = Vs.copy()
        A[0] *= sx
        A[1] *= sy
        A[2] = np.cross(A[0], A[1])
        B = Vt.copy()
        B[2] = np.cross(B[0], B[1])
        R = B.T @ A
        out.append(Pose(R, ct - R @ cs))
    return out


def ransac_align(source: PointCloud, target: PointCloud, params: RegistrationParams | None = None, seed: int = 0) -> Pose:
    """Coarse rigid alignment of ``source`` onto ``target``."""
    params = params or RegistrationParams()
    pose, frac = _consensus(source, target, params, seed)
    if frac < MIN_INLIER_FRACTION:
        raise NoConsensus(f"best inlier fraction {frac:.3f} below {MIN_INLIER_FRACTION}")
    return pose


def icp_refine(source: PointCloud, target: PointCloud, init: Pose, params: RegistrationParams | None = None) -> RegistrationResult:
    """Point-to-point ICP; returns the best iterate seen."""
    params = params or RegistrationParams()
    S, T = source.points, target.points
    tree = cKDTree(T)
    pose = init
    best = None
    prev = math.inf
    rises = 0
    it = 0
    for it in range(1, params.icp_max_iterations + 1):
        d, j = tree.query(pose.apply(S), distance_upper_bound=params.max_correspondence)
        m = np.isfinite(d)
        if m.sum() < 3:
            break
        rmse = float(np.sqrt(np.mean(d[m] ** 2)))
        frac = float(m.mean())
        if best is None or rmse < best[1]:
            best = (pose, rmse, frac)
        if rmse <= EXACT_FIT:
            break
        rises = rises + 1 if rmse > prev else 0
        if rises >= 5:
            raise Diverged(f"rmse increased for {rises} consecutive iterations")
        if prev - rmse < params.icp_convergence and rmse <= prev:
            break
        prev = rmse
        step = kabsch(pose.apply(S[m]), T[j[m]])
        pose = step @ pose
    if best is None:
        raise Diverged("no correspondences within max_correspondence")
    return RegistrationResult(best[0], best[1], best[2], it)


def residual_rmse(source: PointCloud, target: PointCloud, pose: Pose) -> float:
    """RMS distance from every transformed source point to its nearest target point."""
    d, _ = cKDTree(target.points).query(pose.apply(source.points))
    return float(np.sqrt(np.mean(d**2)))


def register(source: PointCloud, target: PointCloud, params: RegistrationParams | None = None, seed: int = 0) -> RegistrationResult:
    params = params or RegistrationParams()
    return icp_refine(source, target, ransac_align(source, target, params, seed), params)


def shape_error(
    generated: PointCloud,
    target_cavity: CavitySpec,
    params: RegistrationParams | None = None,
    seed: int = 0,
) -> RegistrationResult:
    """Align a measured cavity cloud to the ideal cavity and report the residual.

    Every generated point counts towards the reported RMSE, including those
    beyond ``max_correspondence`` that ICP ignores while updating.
    """
    if len(generated) == 0:
        raise ValueError("generated cloud is empty")
    params = params or RegistrationParams()
    target = cavity_point_cloud(target_cavity, TARGET_SPACING)
    res = register(generated, target, params, seed)
    return RegistrationResult(res.transform, residual_rmse(generated, target, res.transform), res.inlier_fraction, res.iterations_used)
