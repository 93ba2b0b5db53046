"""Independent reference implementations used by the unit and acceptance tests."""
import itertools
import math

import numpy as np

from feakm.align import CorrespondenceSet, DegenerateGeometryError, estimate_rigid_svd, residuals
from feakm.evaluation import Box


def mc_iou(a: Box, b: Box, n_side: int = 1000, seed: int = 0) -> float:
    """Jittered-grid Monte-Carlo IoU over the joint bounding box (n_side**2 samples)."""
    pts = np.vstack([a.corners(), b.corners()])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    rng = np.random.default_rng(seed)
    gx, gy = np.meshgrid(np.arange(n_side), np.arange(n_side))
    u = (gx.ravel() + rng.random(n_side * n_side)) / n_side
    v = (gy.ravel() + rng.random(n_side * n_side)) / n_side
    x = lo[0] + u * (hi[0] - lo[0])
    y = lo[1] + v * (hi[1] - lo[1])

    def inside(box):
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        dx, dy = x - box.cx, y - box.cy
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        return (np.abs(lx) <= box.length / 2) & (np.abs(ly) <= box.width / 2)

    ia, ib = inside(a), inside(b)
    return np.count_nonzero(ia & ib) / np.count_nonzero(ia | ib)


def axis_aligned_iou(a: Box, b: Box) -> float:
    iw = max(0.0, min(a.cx + a.length / 2, b.cx + b.length / 2) - max(a.cx - a.length / 2, b.cx - b.length / 2))
    ih = max(0.0, min(a.cy + a.width / 2, b.cy + b.width / 2) - max(a.cy - a.width / 2, b.cy - b.width / 2))
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _catmull_rom(p, t):
    p0, p1, p2, p3 = p
    return 0.5 * (
        2 * p1
        + (-p0 + p2) * t
        + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t ** 2
        + (-p0 + 3 * p1 - 3 * p2 + p3) * t ** 3
    )


def bicubic_oracle(grid, x, y):
    """Tensor-product Catmull-Rom patch in its polynomial form, edges clamped."""
    h, w = grid.shape[:2]
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    rows = []
    for dr in range(-1, 3):
        r = min(max(y0 + dr, 0), h - 1)
        pts = [grid[r, min(max(x0 + dc, 0), w - 1)] for dc in range(-1, 3)]
        rows.append(_catmull_rom(pts, x - x0))
    return _catmull_rom(rows, y - y0)


def naive_sinkhorn(sim, alpha, tol=1e-12, max_iters=20_000):
    """Plain-domain Sinkhorn on the dustbin-augmented kernel; small, well-scaled inputs only."""
    m, n = sim.shape
    z = np.full((m + 1, n + 1), alpha)
    z[:m, :n] = sim
    k = np.exp(z - z.max())
    mu = np.r_[np.ones(m), n]
    nu = np.r_[np.ones(n), m]
    u = np.ones(m + 1)
    v = np.ones(n + 1)
    for _ in range(max_iters):
        u = mu / (k @ v)
        v = nu / (k.T @ u)
        if np.max(np.abs(u * (k @ v) - mu)) < tol:
            break
    return u[:, None] * k * v[None, :]


def brute_force_consensus(c: CorrespondenceSet, thr: float) -> set:
    """Largest inlier set over every 2-point hypothesis; ties broken by summed residual."""
    best, best_key = set(), None
    for i, j in itertools.combinations(range(len(c)), 2):
        try:
            t = estimate_rigid_svd(c.subset([i, j]))
        except DegenerateGeometryError:
            continue
        res = residuals(t, c)
        mask = res <= thr
        key = (int(mask.sum()), -float(res[mask].sum()))
        if best_key is None or key > best_key:
            best, best_key = set(np.nonzero(mask)[0].tolist()), key
    return best


def bilinear_error_bound(fn, shape, supersample: int = 10) -> float:
    """Worst-case error of one bilinear lookup of the continuous field ``fn(cols, rows)``.

    Second derivatives come from finite differences of ``fn`` sampled on a
    grid ``supersample`` times finer than the cell grid; the classic bound
    is (|f_xx| + |f_yy|) / 8 for unit cells.
    """
    h, w = shape
    s = 1.0 / supersample
    rows, cols = np.mgrid[-1:h + 1:s, -1:w + 1:s]
    v = fn(cols, rows)
    fxx = np.abs(np.diff(v, 2, axis=1)).max() / s ** 2
    fyy = np.abs(np.diff(v, 2, axis=0)).max() / s ** 2
    return (fxx + fyy) / 8
