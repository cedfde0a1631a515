"""Cross-modal detection pairing and frame-to-frame instance tracking.

2D and 3D detections of the same person are paired by projecting the 3D
box corners into the image and matching rectangles with minimum-cost
assignment (cost 1 - IoU). Tracking then links paired detections across
frames on 3D center distance. Both use the same assignment solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInputError
from .geometry import Calibration, Pose2D, project


@dataclass(frozen=True)
class Detection2D:
    """Image-space person box (u_min, v_min, u_max, v_max) with a score."""

    box: tuple[float, float, float, float]
    score: float = 1.0

    def __post_init__(self):
        u0, v0, u1, v1 = self.box
        if not (u0 < u1 and v0 < v1):
            raise InvalidInputError(f"degenerate 2D box {self.box}")


@dataclass(frozen=True)
class Detection3D:
    """World-space person box: center, size (meters), yaw (radians)."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        if any(s <= 0 for s in self.size):
            raise InvalidInputError(f"3D box size must be positive, got {self.size}")

    def corners(self) -> np.ndarray:
        cx, cy, cz = self.center
        sx, sy, sz = self.size
        signs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)],
                         dtype=np.float64)
        local = signs * np.array([sx, sy, sz]) / 2.0
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return local @ rot.T + np.array([cx, cy, cz])


def _assignment_entries(cost: np.ndarray) -> list[float]:
    rows, cols = linear_sum_assignment(cost)
    return [float(cost[r, c]) for r, c in zip(rows, cols)]


def hungarian(cost) -> list[tuple[int, int]]:
    """Globally optimal min-cost assignment of rows to columns.

    Returns min(m, n) pairs. Among equal-cost optima the lexicographically
    smallest (row, col) sequence is returned, which makes results stable
    for degenerate cost matrices. Totals are compared with exact
    (order-independent) float summation, so the tie test is reliable.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    if cost.ndim != 2:
        raise InvalidInputError(f"cost matrix must be 2D, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise InvalidInputError("cost matrix contains non-finite entries")

    rows = list(range(cost.shape[0]))
    cols = list(range(cost.shape[1]))
    k = min(len(rows), len(cols))
    pairs: list[tuple[int, int]] = []
    while len(pairs) < k:
        best = math.fsum(_assignment_entries(cost[np.ix_(rows, cols)]))
        r = rows[0]
        placed = False
        for cj, c in enumerate(cols):
            need = k - len(pairs) - 1
            if need > 0:
                rest = cost[np.ix_(rows[1:], cols[:cj] + cols[cj + 1:])]
                entries = _assignment_entries(rest)
            else:
                entries = []
            if math.fsum([float(cost[r, c])] + entries) == best:
                pairs.append((r, c))
                cols.remove(c)
                rows.pop(0)
                placed = True
                break
        if not placed:
            # No optimal assignment uses this row (only possible when
            # rows outnumber columns); drop it and continue.
            rows.pop(0)
    return pairs


def _rect_iou(a: tuple[float, float, float, float],
              b: tuple[float, float, float, float]) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def projected_rect(det: Detection3D, calib: Calibration) -> tuple[float, float, float, float] | None:
    """Axis-aligned pixel rectangle of the projected 3D box corners.

    Corners behind the camera are dropped; None when every corner is
    behind (the box cannot participate in image-space matching).
    """
    pixels, valid = project(det.corners(), calib)
    if not valid.any():
        return None
    pix = pixels[valid]
    u0, v0 = pix.min(axis=0)
    u1, v1 = pix.max(axis=0)
    if not (u0 < u1 and v0 < v1):
        return None
    return (float(u0), float(v0), float(u1), float(v1))


def pair_2d_3d(dets2d: list[Detection2D], dets3d: list[Detection3D],
               calib: Calibration, iou_threshold: float = 0.3):
    """Match 2D and 3D detections of the same people.

    Returns (pairs, unmatched2d, unmatched3d) where pairs are
    (index2d, index3d) tuples. Pairs whose projected-rectangle IoU falls
    below the threshold are rejected.
    """
    rects = [projected_rect(d, calib) for d in dets3d]
    usable = [i for i, r in enumerate(rects) if r is not None]
    if not dets2d or not usable:
        return [], list(range(len(dets2d))), list(range(len(dets3d)))

    iou = np.zeros((len(dets2d), len(usable)))
    for i, d2 in enumerate(dets2d):
        for j, k3 in enumerate(usable):
            iou[i, j] = _rect_iou(d2.box, rects[k3])
    assignment = hungarian(1.0 - iou)
    pairs = [(i, usable[j]) for i, j in assignment if iou[i, j] >= iou_threshold]
    matched2d = {i for i, _ in pairs}
    matched3d = {j for _, j in pairs}
    unmatched2d = [i for i in range(len(dets2d)) if i not in matched2d]
    unmatched3d = [j for j in range(len(dets3d)) if j not in matched3d]
    return pairs, unmatched2d, unmatched3d


@dataclass
class PairedObservation:
    """One person seen in both modalities in one frame.

    ``kp2d`` rides with the 2D detection (they come from the same image
    pipeline); ``person_index`` records which stored person produced the
    3D detection, which is what evaluation compares against.
    """

    det2d: Detection2D
    det3d: Detection3D
    person_index: int = -1
    kp2d: Pose2D | None = None


@dataclass
class Track:
    """A tracked person instance across consecutive frames.

    ``history[i]`` holds the observation at frame ``start_frame + i`` or
    None for a miss, so indices stay contiguous.
    """

    track_id: int
    start_frame: int
    history: list[PairedObservation | None] = field(default_factory=list)
    misses: int = 0
    retired: bool = False

    @property
    def age(self) -> int:
        return len(self.history)

    def last_center(self) -> np.ndarray:
        for obs in reversed(self.history):
            if obs is not None:
                return np.asarray(obs.det3d.center, dtype=np.float64)
        raise InvalidInputError("track has no observations")


class InstanceTracker:
    """Greedy-free frame-to-frame tracker over paired detections.

    Cost is Euclidean distance between 3D box centers, solved with the
    assignment solver and gated; unmatched observations spawn tracks and
    tracks unseen for more than ``max_misses`` frames retire. ``step``
    must be called once per frame in order.
    """

    def __init__(self, gate_distance: float = 1.0, max_misses: int = 3):
        self.gate_distance = gate_distance
        self.max_misses = max_misses
        self.tracks: list[Track] = []
        self._next_id = 0
        self._frame = 0

    def _active(self) -> list[Track]:
        return [t for t in self.tracks if not t.retired]

    def step(self, observations: list[PairedObservation]) -> None:
        active = self._active()
        if active and observations:
            cost = np.zeros((len(active), len(observations)))
            for i, track in enumerate(active):
                tc = track.last_center()
                for j, obs in enumerate(observations):
                    cost[i, j] = float(np.linalg.norm(tc - np.asarray(obs.det3d.center)))
            assignment = hungarian(cost)
            assignment = [(i, j) for i, j in assignment if cost[i, j] <= self.gate_distance]
        else:
            assignment = []

        matched_tracks = {i for i, _ in assignment}
        matched_obs = {j for _, j in assignment}
        for i, j in assignment:
            track = active[i]
            track.history.append(observations[j])
            track.misses = 0
        for i, track in enumerate(active):
            if i in matched_tracks:
                continue
            track.history.append(None)
            track.misses += 1
            if track.misses > self.max_misses:
                track.retired = True
        for j, obs in enumerate(observations):
            if j in matched_obs:
                continue
            self.tracks.append(Track(self._next_id, self._frame, [obs]))
            self._next_id += 1
        self._frame += 1


@dataclass(frozen=True)
class SequenceWindow:
    """T consecutive frames of one track with both modalities present."""

    track_id: int
    start_frame: int
    observations: tuple[PairedObservation, ...]


def build_sequences(tracks: list[Track], window: int = 4) -> list[SequenceWindow]:
    """Stride-1 sliding windows of fully observed frames per track."""
    out: list[SequenceWindow] = []
    for track in tracks:
        hist = track.history
        for i in range(len(hist) - window + 1):
            chunk = hist[i : i + window]
            if all(obs is not None for obs in chunk):
                out.append(SequenceWindow(track.track_id, track.start_frame + i, tuple(chunk)))
    return out
