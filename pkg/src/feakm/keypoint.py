"""Interest points from confidence maps and semi-dense descriptors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import ConfidenceMap, FeatureGrid, greedy_nms


@dataclass
class KeypointSet:
    """Keypoints in the owning agent's grid cells, ``(col, row)`` order."""

    coords: np.ndarray
    descriptors: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        n = len(self.coords)
        desc = np.asarray(self.descriptors, dtype=float)
        if desc.ndim != 2:
            desc = desc.reshape(n, -1) if n else desc.reshape(0, 0)
        self.descriptors = desc
        self.scores = np.asarray(self.scores, dtype=float).reshape(n)
        if n and np.any(np.abs(np.linalg.norm(self.descriptors, axis=1) - 1.0) > 1e-6):
            raise ValueError("keypoint descriptors must be unit norm")

    def __len__(self):
        return len(self.coords)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]


def extract_keypoints(c: ConfidenceMap, delta: float = 0.3, max_points: int = 128, nms_radius: int = 2):
    """Cells with confidence > delta after greedy NMS, best first.

    Returns a list of ``((col, row), score)``.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    peaks = greedy_nms(c.data, delta, nms_radius, max_points)
    return [((float(col), float(row)), s) for row, col, s in peaks]


def average_pool(data: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool the two leading axes; trailing partial blocks average what they hold."""
    if factor == 1:
        return data
    h, w = data.shape[:2]
    if h % factor == 0 and w % factor == 0:
        blocks = data.reshape((h // factor, factor, w // factor, factor) + data.shape[2:])
        return blocks.mean(axis=(1, 3))
    ri = np.arange(0, h, factor)
    ci = np.arange(0, w, factor)
    s = np.add.reduceat(np.add.reduceat(data, ri, axis=0), ci, axis=1)
    nr = np.minimum(ri + factor, h) - ri
    nc = np.minimum(ci + factor, w) - ci
    counts = (nr[:, None] * nc[None, :]).astype(float)
    return s / counts.reshape(counts.shape + (1,) * (data.ndim - 2))


def cubic_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic weights for taps at offsets -1, 0, 1, 2 from floor; shape (..., 4)."""
    t = np.asarray(t, dtype=float)
    d = np.stack([1.0 + t, t, 1.0 - t, 2.0 - t], axis=-1)
    near = ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0
    far = ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a
    return np.where(d <= 1.0, near, far)


def sample_bicubic(grid: np.ndarray, coords) -> np.ndarray:
    """Catmull-Rom interpolation of an (H, W, D) grid at ``(col, row)`` points, edges clamped."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    h, w = grid.shape[:2]
    x, y = coords[:, 0], coords[:, 1]
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    wx = cubic_weights(x - x0)
    wy = cubic_weights(y - y0)
    taps = np.arange(-1, 3)
    cols = np.clip(x0[:, None] + taps, 0, w - 1)
    rows = np.clip(y0[:, None] + taps, 0, h - 1)
    patch = grid[rows[:, :, None], cols[:, None, :]]  # (N, 4, 4, D)
    return np.einsum("nr,nc,nrcd->nd", wy, wx, patch)


def compute_descriptors(f: FeatureGrid, coords, coarse_factor: int = 4):
    """Semi-dense descriptors at keypoint cells.

    The grid is average-pooled by ``coarse_factor``; each keypoint samples the
    pooled grid bicubically at its pooled-cell position and is L2-normalized.
    Returns ``(descriptors, degenerate)`` where degenerate rows are zero.
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    h, w = f.spec.shape
    for x, y in coords:
        if not (-0.5 <= x <= w - 0.5 and -0.5 <= y <= h - 0.5):
            raise ValueError(f"keypoint coordinate ({x}, {y}) lies outside the {w}x{h} grid")
    if len(coords) == 0:
        return np.zeros((0, f.channels)), np.zeros(0, dtype=bool)
    pooled = average_pool(f.data, coarse_factor)
    # pooled cell k is centered on fine cell k * factor + (factor - 1) / 2
    raw = sample_bicubic(pooled, (coords + 0.5) / coarse_factor - 0.5)
    norms = np.linalg.norm(raw, axis=1)
    degenerate = norms < 1e-12
    desc = np.zeros_like(raw)
    desc[~degenerate] = raw[~degenerate] / norms[~degenerate, None]
    return desc, degenerate


def build_keypoints(
    f: FeatureGrid,
    conf: ConfidenceMap,
    delta: float = 0.3,
    max_points: int = 128,
    nms_radius: int = 2,
    coarse_factor: int = 4,
) -> KeypointSet:
    """Extract, describe, and drop degenerate keypoints."""
    picked = extract_keypoints(conf, delta, max_points, nms_radius)
    coords = np.array([p for p, _ in picked], dtype=float).reshape(-1, 2)
    scores = np.array([s for _, s in picked], dtype=float)
    desc, bad = compute_descriptors(f, coords, coarse_factor)
    keep = ~bad
    return KeypointSet(coords[keep], desc[keep], scores[keep])
