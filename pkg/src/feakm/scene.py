"""Synthetic BEV scenes and deterministic stand-ins for the encoder and detection head.

An object is rendered into an agent's feature grid as an isotropic Gaussian
bump whose channel profile is the object's latent signature. Because every
agent stamps the same signature, descriptors sampled at the same object agree
across agents, which is what keypoint matching relies on.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import Box, rotated_iou
from .geometry import (
    GridSpec,
    Pose,
    PoseNoiseSpec,
    grid_to_world,
    invert,
    perturb_pose,
    world_to_grid,
)


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    noise: PoseNoiseSpec = field(default_factory=PoseNoiseSpec)
    n_objects: tuple = (40, 60)
    length_range: tuple = (3.5, 5.0)
    width_range: tuple = (1.6, 2.5)
    # objects are placed in the ego grid extent grown by this margin (m)
    placement_margin: float = 20.0
    min_separation: float = 6.0
    n_agents: int = 2
    # collaborator placement relative to the ego (ego sits at the world origin)
    collaborator_x: tuple = (-40.0, 40.0)
    collaborator_y: tuple = (-20.0, 20.0)
    collaborator_yaw_deg: tuple = (-30.0, 30.0)
    comm_range: float = 100.0
    p_occlusion: float = 0.2
    channels: int = 64
    bump_sigma: float = 1.5
    background_noise: float = 0.05
    signature_density: float = 0.25
    max_attempts: int = 200

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError("n_agents must be at least 2")
        if self.comm_range <= 0:
            raise ValueError("comm_range must be positive")
        if not 0.0 <= self.p_occlusion <= 1.0:
            raise ValueError("p_occlusion must lie in [0, 1]")
        if self.channels < 1:
            raise ValueError("channels must be positive")
        if self.n_objects[0] < 0 or self.n_objects[0] > self.n_objects[1]:
            raise ValueError("n_objects must be a non-negative (min, max) range")
        if self.length_range[0] <= 0 or self.width_range[0] <= 0:
            raise ValueError("object sizes must be positive")


@dataclass(frozen=True)
class SceneObject:
    id: int
    center: np.ndarray
    size: tuple
    yaw: float
    signature: np.ndarray

    def box(self, score: float = 1.0) -> Box:
        return Box(float(self.center[0]), float(self.center[1]), self.size[0], self.size[1], self.yaw, score)


@dataclass(frozen=True)
class Scene:
    config: SceneConfig
    objects: list
    agent_poses_true: list
    agent_poses_reported: list
    # occluded[a, k]: object k is hidden from agent a
    occluded: np.ndarray
    seed: int

    @property
    def comm_range(self) -> float:
        return self.config.comm_range

    @property
    def n_agents(self) -> int:
        return len(self.agent_poses_true)

    def objects_in_frame(self, agent: int) -> list:
        """Objects re-expressed in an agent's true frame (center and yaw)."""
        to_agent = _world_to_agent(self.agent_poses_true[agent])
        out = []
        for o in self.objects:
            c = to_agent.apply(o.center)
            yaw = o.yaw - self.agent_poses_true[agent].yaw
            out.append(replace(o, center=c, yaw=yaw))
        return out

    def visible(self, agent: int) -> np.ndarray:
        """Mask of objects the agent senses: in range, inside its grid, not occluded."""
        pose = self.agent_poses_true[agent]
        centers = self.centers()
        if len(centers) == 0:
            return np.zeros(0, dtype=bool)
        dist = np.hypot(centers[:, 0] - pose.x, centers[:, 1] - pose.y)
        local = _world_to_agent(pose).apply(centers)
        return (dist <= self.comm_range) & self.config.grid.contains(local) & ~self.occluded[agent]

    def in_detection_range(self, agent: int) -> np.ndarray:
        """Objects whose centers fall inside the agent's grid, occluded or not."""
        centers = self.centers()
        if len(centers) == 0:
            return np.zeros(0, dtype=bool)
        local = _world_to_agent(self.agent_poses_true[agent]).apply(centers)
        return self.config.grid.contains(local)

    def centers(self) -> np.ndarray:
        return np.array([o.center for o in self.objects], dtype=float).reshape(-1, 2)

    def to_jsonl(self) -> str:
        lines = [json.dumps({
            "type": "scene",
            "seed": int(self.seed),
            "comm_range": self.comm_range,
            "grid": self.config.grid.to_dict(),
            "n_objects": len(self.objects),
        })]
        for a in range(self.n_agents):
            lines.append(json.dumps({
                "type": "agent",
                "index": a,
                "pose_true": list(self.agent_poses_true[a].as_tuple()),
                "pose_reported": list(self.agent_poses_reported[a].as_tuple()),
                "occluded": [int(o.id) for o, m in zip(self.objects, self.occluded[a]) if m],
            }))
        for o in self.objects:
            lines.append(json.dumps({
                "type": "object",
                "id": int(o.id),
                "center": [float(v) for v in o.center],
                "size": [float(v) for v in o.size],
                "yaw": float(o.yaw),
                "signature": [float(v) for v in o.signature],
            }))
        return "\n".join(lines) + "\n"


def _world_to_agent(pose: Pose):
    return invert(pose.to_transform())


def random_signature(rng: np.random.Generator, channels: int, density: float) -> np.ndarray:
    """Sparse non-negative unit vector; sparsity keeps unrelated signatures near-orthogonal."""
    while True:
        active = rng.random(channels) < density
        sig = np.abs(rng.standard_normal(channels)) * active
        n = np.linalg.norm(sig)
        if n > 0:
            return sig / n


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Place objects without overlap, then sample agents, occlusion and noisy poses."""
    ss = np.random.SeedSequence(int(seed))
    place_ss, agent_ss, noise_ss = ss.spawn(3)
    rng = np.random.default_rng(place_ss)
    g = config.grid
    m = config.placement_margin
    lo = np.array([g.x_min - m, g.y_min - m])
    hi = np.array([g.x_max + m, g.y_max + m])

    n = int(rng.integers(config.n_objects[0], config.n_objects[1] + 1))
    objects: list[SceneObject] = []
    boxes: list[Box] = []
    for k in range(n):
        for _ in range(config.max_attempts):
            center = lo + rng.random(2) * (hi - lo)
            size = (float(rng.uniform(*config.length_range)), float(rng.uniform(*config.width_range)))
            yaw = float(rng.uniform(-math.pi, math.pi))
            cand = Box(center[0], center[1], size[0], size[1], yaw)
            if all(
                math.hypot(cand.cx - b.cx, cand.cy - b.cy) >= config.min_separation
                and rotated_iou(cand, b) == 0.0
                for b in boxes
            ):
                break
        else:
            raise SceneGenerationError(
                f"could not place object {k + 1} of {n} after {config.max_attempts} attempts; "
                f"scene is too congested (min_separation={config.min_separation} m, "
                f"area={(hi - lo)[0]:.0f}x{(hi - lo)[1]:.0f} m)"
            )
        sig = random_signature(rng, config.channels, config.signature_density)
        objects.append(SceneObject(k, center, size, yaw, sig))
        boxes.append(cand)

    arng = np.random.default_rng(agent_ss)
    poses = [Pose.planar(0.0, 0.0, 0.0)]
    for _ in range(config.n_agents - 1):
        poses.append(Pose.planar(
            arng.uniform(*config.collaborator_x),
            arng.uniform(*config.collaborator_y),
            math.radians(arng.uniform(*config.collaborator_yaw_deg)),
        ))
    occluded = arng.random((config.n_agents, n)) < config.p_occlusion

    nrng = np.random.default_rng(noise_ss)
    reported = [perturb_pose(p, config.noise, nrng) for p in poses]
    return Scene(config, objects, poses, reported, occluded, int(seed))


@dataclass
class FeatureGrid:
    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[:2] != self.spec.shape:
            raise ValueError(f"feature data shape {self.data.shape} does not match grid {self.spec.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.einsum("hwd,hwd->hw", self.data, self.data))


@dataclass
class ConfidenceMap:
    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != self.spec.shape:
            raise ValueError("confidence map shape does not match grid")
        if self.data.size and (self.data.min() < 0 or self.data.max() > 1):
            raise ValueError("confidence values must lie in [0, 1]")


@dataclass
class DetectionSet:
    """Oriented boxes (agent frame, meters) with scores."""

    boxes: list = field(default_factory=list)

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)


def stamp_bump(data: np.ndarray, center_cells, sigma: float, profile: np.ndarray) -> None:
    """Add ``exp(-r^2 / 2 sigma^2) * profile`` around a continuous cell position, in place."""
    h, w, _ = data.shape
    cx, cy = center_cells
    r = int(math.ceil(4.0 * sigma))
    c0, c1 = max(0, int(math.floor(cx)) - r), min(w, int(math.floor(cx)) + r + 2)
    r0, r1 = max(0, int(math.floor(cy)) - r), min(h, int(math.floor(cy)) + r + 2)
    if c0 >= c1 or r0 >= r1:
        return
    cols = np.arange(c0, c1) - cx
    rows = np.arange(r0, r1) - cy
    bump = np.exp(-(rows[:, None] ** 2 + cols[None, :] ** 2) / (2.0 * sigma * sigma))
    data[r0:r1, c0:c1, :] += bump[:, :, None] * profile[None, None, :]


def encode_agent_view(scene: Scene, agent_index: int) -> FeatureGrid:
    """Render the agent's BEV feature grid from its TRUE pose."""
    if not 0 <= agent_index < scene.n_agents:
        raise IndexError(f"agent_index {agent_index} out of range")
    cfg = scene.config
    g = cfg.grid
    data = np.zeros((g.H, g.W, cfg.channels))
    local = scene.objects_in_frame(agent_index)
    for o, vis in zip(local, scene.visible(agent_index)):
        if vis:
            stamp_bump(data, world_to_grid(o.center, g), cfg.bump_sigma, o.signature)
    if cfg.background_noise > 0:
        nrng = np.random.default_rng(np.random.SeedSequence([int(scene.seed), 7919, agent_index]))
        data += cfg.background_noise * nrng.random(data.shape)
    np.maximum(data, 0.0, out=data)
    return FeatureGrid(g, data)


def confidence_from_features(f: FeatureGrid, min_contrast: float = 0.2) -> ConfidenceMap:
    """Channel L2 magnitude, background floor (median) removed, scaled so the peak is 1.

    Grids whose peak does not rise ``min_contrast`` above the floor carry no
    objects and map to all zeros.
    """
    mag = f.magnitude()
    if mag.size == 0:
        return ConfidenceMap(f.spec, mag)
    floor = float(np.median(mag))
    top = float(mag.max())
    if top - floor < min_contrast or top <= 0:
        return ConfidenceMap(f.spec, np.zeros_like(mag))
    conf = np.clip((mag - floor) / (top - floor), 0.0, 1.0)
    return ConfidenceMap(f.spec, conf)


def greedy_nms(score_map: np.ndarray, threshold: float, radius: int, max_points: int | None = None):
    """Cells with score > threshold, greedily suppressed within Chebyshev ``radius``.

    Returns a list of ``(row, col, score)`` ordered by (score desc, row, col).
    """
    rows, cols = np.nonzero(score_map > threshold)
    if len(rows) == 0:
        return []
    vals = score_map[rows, cols]
    order = np.lexsort((cols, rows, -vals))
    suppressed = np.zeros(score_map.shape, dtype=bool)
    h, w = score_map.shape
    out = []
    for k in order:
        r, c = int(rows[k]), int(cols[k])
        if suppressed[r, c]:
            continue
        out.append((r, c, float(vals[k])))
        if max_points is not None and len(out) >= max_points:
            break
        suppressed[max(0, r - radius):min(h, r + radius + 1), max(0, c - radius):min(w, c + radius + 1)] = True
    return out


def _parabolic_offset(m: np.ndarray, r: int, c: int) -> tuple[float, float]:
    h, w = m.shape

    def fit(a, b, cc):
        den = a - 2.0 * b + cc
        if den >= 0:
            return 0.0
        return float(np.clip(0.5 * (a - cc) / den, -0.5, 0.5))

    dc = fit(m[r, c - 1], m[r, c], m[r, c + 1]) if 0 < c < w - 1 else 0.0
    dr = fit(m[r - 1, c], m[r, c], m[r + 1, c]) if 0 < r < h - 1 else 0.0
    return dc, dr


DEFAULT_BOX = (4.5, 2.0)


def decode_detections(
    f: FeatureGrid,
    nms_radius: int = 4,
    peak_threshold: float = 0.5,
    reference_objects=None,
    min_contrast: float = 0.2,
):
    """Stand-in detection head: confidence peaks become oriented boxes.

    ``reference_objects`` (objects in the grid's frame) lets a peak that lands
    within one cell of a true object adopt that object's size and heading;
    any other peak gets a 4.5 x 2.0 m, yaw 0 prior box.
    """
    conf = confidence_from_features(f, min_contrast)
    g = f.spec
    peaks = greedy_nms(conf.data, peak_threshold, nms_radius)
    ref_cells = None
    if reference_objects:
        ref_cells = world_to_grid(np.array([o.center for o in reference_objects]), g)
    boxes = []
    for r, c, s in peaks:
        dc, dr = _parabolic_offset(conf.data, r, c)
        cell = np.array([c + dc, r + dr])
        center = grid_to_world(cell, g)
        size, yaw = DEFAULT_BOX, 0.0
        if ref_cells is not None:
            d = np.hypot(*(ref_cells - cell).T)
            j = int(np.argmin(d))
            if d[j] <= 1.0:
                size, yaw = reference_objects[j].size, reference_objects[j].yaw
        boxes.append(Box(float(center[0]), float(center[1]), size[0], size[1], yaw, s))
    return DetectionSet(boxes), conf
