"""Rigid alignment of matched keypoints and pose-status verification."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridSpec, Pose, RigidTransform2D, grid_to_world, relative_transform, transform_difference
from .matcher import MatchFailure


class DegenerateGeometryError(ValueError):
    pass


class RansacFailure(RuntimeError):
    def __init__(self, best: int, required: int):
        super().__init__(f"RANSAC found {best} inliers, needed {required}")
        self.best = best
        self.required = required


class Status(str, enum.Enum):
    CONSISTENT = "Consistent"
    DEVIANT = "Deviant"
    UNVERIFIABLE = "Unverifiable"


@dataclass
class CorrespondenceSet:
    """``source`` (agent j frame, m) paired row-wise with ``target`` (agent i frame, m)."""

    source: np.ndarray
    target: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=float).reshape(-1, 2)
        self.target = np.asarray(self.target, dtype=float).reshape(-1, 2)
        if self.weights is None:
            self.weights = np.ones(len(self.source))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        p = len(self.source)
        if len(self.target) != p or len(self.weights) != p:
            raise ValueError("source, target and weights must have equal length")
        if p < 2:
            raise ValueError("at least two correspondences are required")
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be positive and finite")

    def __len__(self):
        return len(self.source)

    def subset(self, idx) -> "CorrespondenceSet":
        return CorrespondenceSet(self.source[idx], self.target[idx], self.weights[idx])


@dataclass
class AlignmentResult:
    transform: RigidTransform2D
    inliers: list = field(default_factory=list)
    rms_residual: float = 0.0
    status: Status | None = None
    computed: RigidTransform2D | None = None


def estimate_rigid_svd(c: CorrespondenceSet) -> RigidTransform2D:
    """Weighted least-squares rotation and translation taking source onto target (Kabsch)."""
    w = c.weights / c.weights.sum()
    mu_s = w @ c.source
    mu_t = w @ c.target
    xs = c.source - mu_s
    xt = c.target - mu_t
    if np.max(np.linalg.norm(xs, axis=1)) < 1e-12:
        raise DegenerateGeometryError("all source points coincide; rotation is undetermined")
    h = (xs * w[:, None]).T @ xt
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, d]) @ u.T
    return RigidTransform2D(r, mu_t - r @ mu_s)


def residuals(t: RigidTransform2D, c: CorrespondenceSet) -> np.ndarray:
    return np.linalg.norm(t.apply(c.source) - c.target, axis=1)


def estimate_rigid_ransac(
    c: CorrespondenceSet,
    iterations: int = 256,
    inlier_threshold: float = 1.0,
    min_inliers: int = 3,
    rng: np.random.Generator | int | None = 0,
) -> AlignmentResult:
    """2-point RANSAC followed by a weighted SVD refit on the largest consensus set.

    Ties in inlier count go to the hypothesis with the smaller summed residual
    over its inliers.
    """
    rng = np.random.default_rng(rng)
    p = len(c)
    best_mask, best_key = None, None
    for _ in range(iterations):
        i, j = rng.choice(p, size=2, replace=False)
        if np.linalg.norm(c.source[i] - c.source[j]) < 1e-9:
            continue
        try:
            t = estimate_rigid_svd(CorrespondenceSet(c.source[[i, j]], c.target[[i, j]]))
        except DegenerateGeometryError:
            continue
        res = residuals(t, c)
        mask = res <= inlier_threshold
        key = (int(mask.sum()), -float(res[mask].sum()))
        if best_key is None or key > best_key:
            best_mask, best_key = mask, key
    if best_mask is None:
        best_mask = np.zeros(p, dtype=bool)
    if best_mask.sum() < max(min_inliers, 2):
        raise RansacFailure(int(best_mask.sum()), min_inliers)
    inliers = np.nonzero(best_mask)[0]
    t = estimate_rigid_svd(c.subset(inliers))
    # one re-scoring pass with the refined model
    refined = np.nonzero(residuals(t, c) <= inlier_threshold)[0]
    if len(refined) > len(inliers):
        inliers = refined
        t = estimate_rigid_svd(c.subset(inliers))
    res = residuals(t, c.subset(inliers))
    return AlignmentResult(t, [int(k) for k in inliers], float(np.sqrt(np.mean(res ** 2))), None, t)


@dataclass(frozen=True)
class AlignConfig:
    tau_t: float = 0.5
    tau_r_deg: float = 1.0
    ransac_iterations: int = 256
    inlier_threshold: float = 1.0
    min_inliers: int | None = None
    seed: int = 0


def correspondences_from_matches(kp_i, kp_j, m, grid: GridSpec) -> CorrespondenceSet:
    """Matched cells converted to meters; pairs are (index into kp_i, index into kp_j)."""
    target = grid_to_world(kp_i.coords[m.index_a], grid)
    source = grid_to_world(kp_j.coords[m.index_b], grid)
    return CorrespondenceSet(source, target, np.maximum(m.confidences, 1e-12))


def verify_status(computed: RigidTransform2D, reported: RigidTransform2D, tau_t: float, tau_r_deg: float) -> Status:
    dt, dr = transform_difference(computed, reported)
    if dt <= tau_t and dr <= math.radians(tau_r_deg):
        return Status.CONSISTENT
    return Status.DEVIANT


def correct_pose(
    p_i: Pose,
    p_j: Pose,
    kp_i,
    kp_j,
    m,
    grid: GridSpec,
    cfg: AlignConfig = AlignConfig(),
    min_pairs: int = 4,
    rng=None,
) -> AlignmentResult:
    """Estimate T_ij from matches and check it against the reported poses.

    Consistent: the reported relative transform is kept. Deviant: the
    computed transform replaces it. Unverifiable (no usable matches or RANSAC
    failure): the reported transform passes through.
    """
    t_rep = relative_transform(p_i, p_j)
    if m is None or isinstance(m, MatchFailure) or len(m) < 2:
        return AlignmentResult(t_rep, [], 0.0, Status.UNVERIFIABLE)
    min_inliers = cfg.min_inliers if cfg.min_inliers is not None else max(min_pairs, 3)
    try:
        c = correspondences_from_matches(kp_i, kp_j, m, grid)
        res = estimate_rigid_ransac(
            c, cfg.ransac_iterations, cfg.inlier_threshold, min_inliers,
            rng if rng is not None else cfg.seed,
        )
    except (RansacFailure, DegenerateGeometryError):
        return AlignmentResult(t_rep, [], 0.0, Status.UNVERIFIABLE)
    res.status = verify_status(res.transform, t_rep, cfg.tau_t, cfg.tau_r_deg)
    if res.status is Status.CONSISTENT:
        res.transform = t_rep
    return res
