"""Rectify one corrupted collaborator pose from matched keypoints.

A synthetic two-agent scene is generated, then the collaborator's reported
pose is pushed 2 m east, 2 m north and 2 degrees counter-clockwise. The ego
agent matches its keypoints against the collaborator's broadcast, fits a rigid
transform with RANSAC and compares it with the reported one.

    python demos/01_rectify_one_link.py [seed]
"""
import dataclasses
import math
import sys

from feakm.geometry import Pose, relative_transform, transform_difference
from feakm.pipeline import Trial
from feakm.protocol import encode_message
from feakm.scene import SceneConfig, generate_scene

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
scene = generate_scene(SceneConfig(), seed)
p = scene.agent_poses_reported[1]
bad = Pose.planar(p.x + 2.0, p.y + 2.0, p.yaw + math.radians(2.0))
scene = dataclasses.replace(scene, agent_poses_reported=[scene.agent_poses_reported[0], bad])
print(f"scene {seed}: {len(scene.objects)} objects, {int((scene.visible(0) & scene.visible(1)).sum())} seen by both agents")

trial = Trial(scene)
truth = trial.true_transform(1)
reported = relative_transform(*scene.agent_poses_reported)
dt, dr = transform_difference(reported, truth)
print(f"reported pose is off by {dt:.2f} m and {math.degrees(dr):.2f} deg")

matches, _, res, msg = trial.link(1, use_conf=True, k_pairs=4)
print(f"collaborator broadcast {len(msg.coords)} keypoints in {len(encode_message(msg))} bytes")
print(f"{len(matches)} matched pairs, {len(res.inliers)} RANSAC inliers, rms residual {res.rms_residual:.3f} m")

dt, dr = transform_difference(res.transform, truth)
print(f"status {res.status.value}; corrected pose is off by {dt:.3f} m and {math.degrees(dr):.3f} deg")
