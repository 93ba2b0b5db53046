"""Ego-side collaborative pipeline: detect, match, align, warp, fuse, detect again.

One :class:`Trial` holds a scene plus caches, so several pipeline variants
(correction on/off, ablations) can share the expensive per-agent work.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .align import AlignConfig, AlignmentResult, Status, correct_pose
from .fusion import multiscale_fuse, project_grid
from .geometry import relative_transform, transform_difference
from .keypoint import KeypointSet, build_keypoints, compute_descriptors
from .matcher import AttentionWeights, MatchFailure, match_keypoints
from .protocol import CollabMessage, decode_message, encode_message
from .scene import ConfidenceMap, Scene, decode_detections, encode_agent_view, greedy_nms


@dataclass(frozen=True)
class KeypointParams:
    delta: float = 0.3
    max_points: int = 128
    nms_radius: int = 2
    coarse_factor: int = 4


@dataclass(frozen=True)
class MatcherParams:
    k_pairs: int = 4
    temperature: float = 0.1
    sinkhorn_iters: int = 20
    confidence_floor: float = 0.2
    dustbin_similarity: float = 0.5
    attention_rounds: int = 0
    base_frequency: float = 10000.0
    seed: int = 0


@dataclass(frozen=True)
class FusionParams:
    levels: int = 4
    combine: str = "mean"


@dataclass(frozen=True)
class DecoderParams:
    nms_radius: int = 4
    peak_threshold: float = 0.5
    min_contrast: float = 0.2


@dataclass(frozen=True)
class PipelineConfig:
    keypoint: KeypointParams = field(default_factory=KeypointParams)
    matcher: MatcherParams = field(default_factory=MatcherParams)
    align: AlignConfig = field(default_factory=AlignConfig)
    fusion: FusionParams = field(default_factory=FusionParams)
    decoder: DecoderParams = field(default_factory=DecoderParams)


@dataclass(frozen=True)
class Toggles:
    """One pipeline variant.

    ``pose_source``: ``corrected`` (keypoint rectification), ``reported``
    (no correction) or ``true`` (oracle poses).
    """

    pose_source: str = "corrected"
    confidence_map: bool = True
    multiscale: bool = True
    k_pairs: int = 4

    def __post_init__(self):
        if self.pose_source not in ("corrected", "reported", "true"):
            raise ValueError(f"unknown pose_source {self.pose_source!r}")

    @property
    def label(self) -> str:
        head = {"corrected": f"feakm-k{self.k_pairs}", "reported": "no-correction", "true": "oracle"}[self.pose_source]
        parts = [head]
        parts.append("conf" if self.confidence_map else "noconf")
        parts.append("ms" if self.multiscale else "ss")
        return "/".join(parts)


@dataclass
class LinkOutcome:
    """Per-collaborator result for one variant."""

    agent: int
    status: Status | None
    pairs: int
    t_err: float
    r_err_deg: float
    alignment: AlignmentResult | None = None


@dataclass
class TrialOutcome:
    detections: list
    ground_truth: list
    links: list = field(default_factory=list)
    bandwidth: int = 0
    fused: object = None


def raw_keypoints(f, params: KeypointParams) -> KeypointSet:
    """Keypoints without the confidence map: strongest raw feature magnitudes, no threshold."""
    mag = f.magnitude()
    peaks = greedy_nms(mag, 0.0, params.nms_radius, params.max_points)
    coords = np.array([(c, r) for r, c, _ in peaks], dtype=float).reshape(-1, 2)
    top = max((s for _, _, s in peaks), default=1.0) or 1.0
    scores = np.array([s / top for _, _, s in peaks], dtype=float)
    desc, bad = compute_descriptors(f, coords, params.coarse_factor)
    return KeypointSet(coords[~bad], desc[~bad], scores[~bad])


class Trial:
    def __init__(self, scene: Scene, cfg: PipelineConfig = PipelineConfig()):
        self.scene = scene
        self.cfg = cfg
        self.grid = scene.config.grid
        self._features = {}
        self._conf = {}
        self._kp = {}
        self._links = {}
        self._weights = None

    def features(self, a: int):
        if a not in self._features:
            self._features[a] = encode_agent_view(self.scene, a)
        return self._features[a]

    def confidence(self, a: int) -> ConfidenceMap:
        if a not in self._conf:
            d = self.cfg.decoder
            _, conf = decode_detections(self.features(a), d.nms_radius, d.peak_threshold, None, d.min_contrast)
            self._conf[a] = conf
        return self._conf[a]

    def keypoints(self, a: int, use_conf: bool) -> KeypointSet:
        key = (a, use_conf)
        if key not in self._kp:
            p = self.cfg.keypoint
            if use_conf:
                kp = build_keypoints(self.features(a), self.confidence(a), p.delta, p.max_points, p.nms_radius, p.coarse_factor)
            else:
                kp = raw_keypoints(self.features(a), p)
            self._kp[key] = kp
        return self._kp[key]

    def message(self, a: int, use_conf: bool) -> CollabMessage:
        """What agent ``a`` transmits, after a wire round trip."""
        kp = self.keypoints(a, use_conf)
        msg = CollabMessage.from_keypoints(a, self.scene.agent_poses_reported[a], kp)
        return decode_message(encode_message(msg))

    def attention_weights(self, dim: int):
        m = self.cfg.matcher
        if m.attention_rounds <= 0:
            return None
        if self._weights is None or self._weights.dim != dim:
            self._weights = AttentionWeights.initialize(dim, m.attention_rounds, m.seed)
        return self._weights

    def link(self, j: int, use_conf: bool, k_pairs: int, ego: int = 0):
        """Match ego against collaborator ``j`` and rectify their relative pose."""
        key = (j, use_conf, k_pairs)
        if key in self._links:
            return self._links[key]
        m = self.cfg.matcher
        kp_i = self.keypoints(ego, use_conf)
        msg = self.message(j, use_conf)
        kp_j = KeypointSet(msg.coords.astype(float), msg.descriptors.astype(float), msg.scores.astype(float))
        if len(kp_j):
            # the f32 wire round trip perturbs norms by ~1e-8
            kp_j.descriptors /= np.linalg.norm(kp_j.descriptors, axis=1, keepdims=True)
        matches, assignment = match_keypoints(
            kp_i, kp_j, k_pairs, m.temperature, m.sinkhorn_iters, m.confidence_floor,
            m.dustbin_similarity, self.attention_weights(kp_i.dim if len(kp_i) else 0), m.base_frequency,
        )
        rng = np.random.default_rng(np.random.SeedSequence([int(self.scene.seed), 31337, j, int(use_conf), k_pairs]))
        res = correct_pose(
            self.scene.agent_poses_reported[ego], self.scene.agent_poses_reported[j],
            kp_i, kp_j, matches, self.grid, self.cfg.align, k_pairs, rng,
        )
        out = (matches, assignment, res, msg)
        self._links[key] = out
        return out

    def true_transform(self, j: int, ego: int = 0):
        return relative_transform(self.scene.agent_poses_true[ego], self.scene.agent_poses_true[j])

    def ground_truth(self, ego: int = 0) -> list:
        local = self.scene.objects_in_frame(ego)
        mask = self.scene.in_detection_range(ego)
        return [o.box() for o, m in zip(local, mask) if m]

    def run(self, t: Toggles, ego: int = 0, keep_levels: bool = False) -> TrialOutcome:
        scene = self.scene
        warped, links = [], []
        bandwidth = 0
        for j in range(scene.n_agents):
            if j == ego:
                continue
            t_true = self.true_transform(j, ego)
            status, pairs, res = None, 0, None
            if t.pose_source == "true":
                transform = t_true
            elif t.pose_source == "reported":
                transform = relative_transform(scene.agent_poses_reported[ego], scene.agent_poses_reported[j])
            else:
                matches, _, res, msg = self.link(j, t.confidence_map, t.k_pairs, ego)
                bandwidth += len(encode_message(msg))
                transform = res.transform
                status = res.status
                pairs = 0 if isinstance(matches, MatchFailure) else len(matches)
            dt, dr = transform_difference(transform, t_true)
            links.append(LinkOutcome(j, status, pairs, dt, math.degrees(dr), res))
            warped.append(project_grid(self.features(j), transform, self.grid))
        levels = self.cfg.fusion.levels if t.multiscale else 1
        fused = multiscale_fuse(self.features(ego), warped, levels, self.cfg.fusion.combine, keep_levels)
        d = self.cfg.decoder
        dets, _ = decode_detections(fused.grid, d.nms_radius, d.peak_threshold, scene.objects_in_frame(ego), d.min_contrast)
        return TrialOutcome(list(dets), self.ground_truth(ego), links, bandwidth, fused)
