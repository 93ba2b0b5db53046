"""Warping collaborator features into the ego grid and multiscale max fusion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import GridSpec, RigidTransform2D, grid_to_world, invert, world_to_grid
from .keypoint import average_pool
from .scene import FeatureGrid


@dataclass
class FusedFeature:
    grid: FeatureGrid
    contributing_agents: list = field(default_factory=list)
    levels_used: int = 1
    levels: list = field(default_factory=list)


def sample_bilinear(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Bilinear lookup at ``(col, row)`` points with zeros outside the grid."""
    h, w = data.shape[:2]
    padded = np.zeros((h + 2, w + 2) + data.shape[2:], dtype=data.dtype)
    padded[1:-1, 1:-1] = data
    x = coords[..., 0] + 1.0
    y = coords[..., 1] + 1.0
    inside = (x > -1.0) & (x < w + 2.0) & (y > -1.0) & (y < h + 2.0)
    x = np.where(inside, x, 0.0)
    y = np.where(inside, y, 0.0)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = x - x0
    fy = y - y0
    x0c, x1c = np.clip(x0, 0, w + 1), np.clip(x0 + 1, 0, w + 1)
    y0c, y1c = np.clip(y0, 0, h + 1), np.clip(y0 + 1, 0, h + 1)
    # taps beyond the padded ring are outside the source and read as zero
    vx0 = (x0 >= 0) & (x0 <= w + 1)
    vx1 = (x0 + 1 >= 0) & (x0 + 1 <= w + 1)
    vy0 = (y0 >= 0) & (y0 <= h + 1)
    vy1 = (y0 + 1 >= 0) & (y0 + 1 <= h + 1)
    extra = (Ellipsis,) + (None,) * (data.ndim - 2)
    w00 = ((1 - fx) * (1 - fy) * (vx0 & vy0))[extra]
    w01 = (fx * (1 - fy) * (vx1 & vy0))[extra]
    w10 = ((1 - fx) * fy * (vx0 & vy1))[extra]
    w11 = (fx * fy * (vx1 & vy1))[extra]
    out = (
        w00 * padded[y0c, x0c] + w01 * padded[y0c, x1c]
        + w10 * padded[y1c, x0c] + w11 * padded[y1c, x1c]
    )
    out[~inside] = 0
    return out


def project_grid(f_j: FeatureGrid, t: RigidTransform2D, ego_spec: GridSpec) -> FeatureGrid:
    """Resample agent j's grid into the ego grid; ``t`` maps j-frame meters to ego meters."""
    h, w = ego_spec.shape
    rows, cols = np.mgrid[0:h, 0:w]
    cells = np.stack([cols, rows], axis=-1).astype(float)
    ego_xy = grid_to_world(cells, ego_spec)
    src_xy = invert(t).apply(ego_xy.reshape(-1, 2)).reshape(h, w, 2)
    src_cells = world_to_grid(src_xy, f_j.spec)
    return FeatureGrid(ego_spec, sample_bilinear(f_j.data, src_cells))


def _upsample_axis(x: np.ndarray, factor: int, axis: int, size: int) -> np.ndarray:
    n = x.shape[axis]
    pos = (np.arange(size) + 0.5) / factor - 0.5
    pos = np.clip(pos, 0.0, n - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    fr = pos - i0
    shape = [1] * x.ndim
    shape[axis] = size
    fr = fr.reshape(shape)
    return np.take(x, i0, axis=axis) * (1 - fr) + np.take(x, i1, axis=axis) * fr


def upsample_bilinear(x: np.ndarray, factor: int, shape: tuple) -> np.ndarray:
    """Center-aligned bilinear upsampling of the two leading axes, edges clamped."""
    if factor == 1:
        return x
    return _upsample_axis(_upsample_axis(x, factor, 0, shape[0]), factor, 1, shape[1])


def multiscale_fuse(ego: FeatureGrid, warped, levels: int = 4, combine: str = "mean", keep_levels: bool = False) -> FusedFeature:
    """Fuse at ``levels`` scales: pool by 2**(l-1), take the element-wise max
    across agents, upsample back, then average (or concatenate) the levels."""
    warped = list(warped)
    if levels < 1:
        raise ValueError("levels must be at least 1")
    if combine not in ("mean", "concat"):
        raise ValueError(f"unknown combine mode {combine!r}")
    h, w, d = ego.data.shape
    for k, g in enumerate(warped):
        if g.data.shape != ego.data.shape:
            raise ValueError(f"warped grid {k} has shape {g.data.shape}, expected {ego.data.shape}")
    for lvl in range(1, levels + 1):
        f = 2 ** (lvl - 1)
        if h % f or w % f:
            raise ValueError(f"level {lvl}: grid {h}x{w} is not divisible by {f}")
    fused_levels = []
    for lvl in range(1, levels + 1):
        f = 2 ** (lvl - 1)
        fused = average_pool(ego.data, f)
        for g in warped:
            fused = np.maximum(fused, average_pool(g.data, f))
        fused_levels.append(upsample_bilinear(fused, f, (h, w)))
    if combine == "mean":
        out = fused_levels[0] if levels == 1 else sum(fused_levels[1:], fused_levels[0].copy()) / levels
    else:
        out = np.concatenate(fused_levels, axis=-1)
    return FusedFeature(
        FeatureGrid(ego.spec, out),
        contributing_agents=list(range(len(warped) + 1)),
        levels_used=levels,
        levels=fused_levels if keep_levels else [],
    )
