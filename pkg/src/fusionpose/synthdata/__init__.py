"""Deterministic synthetic scenes: articulated capsule bodies, ray-cast
LiDAR, rendered depth rasters, noisy 2D keypoints, jittered detections."""

from .body import BodyModel, GaitAmplitudes, MotionScript, pose_at, rest_pose
from .generate import SceneConfig, default_scene, generate_dataset
from .seqfile import (FrameRecord, PersonFrame, SequenceData, read_manifest,
                      read_sequence, write_manifest, write_sequence)
from .sensors import (LidarConfig, DetectionJitter, occlude_points,
                      render_raster, simulate_2d, simulate_detections,
                      simulate_lidar)

__all__ = [
    "BodyModel", "GaitAmplitudes", "MotionScript", "pose_at", "rest_pose",
    "SceneConfig", "default_scene", "generate_dataset",
    "FrameRecord", "PersonFrame", "SequenceData",
    "read_manifest", "read_sequence", "write_manifest", "write_sequence",
    "LidarConfig", "DetectionJitter", "occlude_points", "render_raster",
    "simulate_2d", "simulate_detections", "simulate_lidar",
]
