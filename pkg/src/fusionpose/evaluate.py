"""Evaluation: run the model over a split and score against GT.

This is the only place ground-truth 3D poses are read. Sliding windows
are scored frame by frame, so a (track, frame) pair seen by several
windows contributes once per window; n_samples counts scored poses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import InstanceDataset
from .geometry import SkeletonSpec, default_skeleton
from .metrics import MetricAccumulator, MetricReport, mpjpe, pck
from .model import FusionPoseModel
from .synthdata.body import rest_pose


def baseline_pose(box_center: np.ndarray, spec: SkeletonSpec | None = None) -> np.ndarray:
    """Static comparator: the unit-scale rest pose with its root placed
    at the 3D crop-box center."""
    spec = spec or default_skeleton()
    rest = rest_pose(spec)
    return rest - rest[spec.root_index] + np.asarray(box_center)


@dataclass
class WindowScore:
    sequence: str
    track_id: int
    start_frame: int
    pck: float
    mpjpe_mm: float


def evaluate_dataset(model: FusionPoseModel | None, dataset: InstanceDataset,
                     split: str, bone_samples: int = 3, squared_cd: bool = False,
                     point_budget: int | None = None, occlusion: float = 0.0,
                     seed: int = 0, mode: str = "model") -> tuple[MetricReport, list[WindowScore]]:
    """Score a dataset split.

    mode: "model" runs the network; "baseline" scores the static rest
    pose anchored at the box center; "oracle" scores GT against itself
    (the upper bound / plumbing check).
    """
    spec = default_skeleton()
    acc = MetricAccumulator(spec, bone_samples, squared_cd)
    windows: list[WindowScore] = []
    for sample in dataset.samples:
        if mode == "model":
            frames = dataset.model_frames(sample, point_budget, occlusion, seed)
            outs = model.forward(frames)
            preds = [o.final_pose.data for o in outs]
        elif mode == "baseline":
            preds = [baseline_pose(fs.box_center, spec) for fs in sample.frames]
        elif mode == "oracle":
            preds = [fs.gt_pose3d for fs in sample.frames]
        else:
            raise ValueError(f"unknown eval mode {mode!r}")
        errs = []
        for fs, pred in zip(sample.frames, preds):
            gt = fs.gt_pose3d
            acc.add(pred, gt, cloud=fs.crop_cloud)
            errs.append((pred, gt))
        windows.append(WindowScore(
            sample.sequence_name, sample.track_id, sample.start_frame,
            pck=float(np.mean([pck(p, g, spec.root_index) for p, g in errs])),
            mpjpe_mm=float(np.mean([mpjpe(p, g, spec.root_index) for p, g in errs])),
        ))
    return acc.report(split), windows


def write_window_scores(windows: list[WindowScore], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence", "track_id", "start_frame", "pck", "mpjpe_mm"])
        for w in windows:
            writer.writerow([w.sequence, w.track_id, w.start_frame,
                             repr(w.pck), repr(w.mpjpe_mm)])


def export_poses(model: FusionPoseModel | None, dataset: InstanceDataset,
                 path: str | Path, use_gt: bool = False) -> int:
    """Write per-frame world poses as CSV; returns the row count.

    Full-precision floats so a re-read reproduces the in-memory values
    exactly.
    """
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence", "track_id", "frame", "joint", "x", "y", "z"])
        for sample in dataset.samples:
            if use_gt:
                preds = [fs.gt_pose3d for fs in sample.frames]
            else:
                frames = dataset.model_frames(sample)
                preds = [o.final_pose.data for o in model.forward(frames)]
            for fs, pose in zip(sample.frames, preds):
                for j, (x, y, z) in enumerate(pose):
                    writer.writerow([sample.sequence_name, sample.track_id,
                                     fs.frame_index, j, repr(float(x)),
                                     repr(float(y)), repr(float(z))])
                    rows += 1
    return rows


def read_exported_poses(path: str | Path) -> dict:
    """Re-read an exported pose file into {(seq, track, frame): (k, 3)}."""
    grouped: dict[tuple, dict[int, tuple]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["sequence"], int(row["track_id"]), int(row["frame"]))
            grouped.setdefault(key, {})[int(row["joint"])] = (
                float(row["x"]), float(row["y"]), float(row["z"]))
    return {
        key: np.array([joints[j] for j in sorted(joints)])
        for key, joints in grouped.items()
    }
