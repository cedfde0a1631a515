"""Sensor simulation over capsule bodies.

LiDAR returns are exact analytic ray-capsule intersections with Gaussian
range noise and i.i.d. drops. The "image" is an inverse-depth raster of
the same capsules (inverse depth, silhouette mask, per-person hue), so
the image branch carries person-discriminative signal without any
photo-realism. 2D keypoints are the projected joints plus pixel noise,
standing in for an off-the-shelf 2D pose network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..association import Detection2D, Detection3D
from ..errors import InvalidInputError
from ..geometry import Calibration, Pose2D, Pose3D, SkeletonSpec, project
from .body import BodyModel, capsules_for

_T_MIN = 1e-9


@dataclass(frozen=True)
class LidarConfig:
    """Desk-scale spinning LiDAR: a 32-beam sensor sweeping a front sector.

    The azimuth sector (rather than a full sweep) keeps a frame under
    10^4 rays at the default resolution.
    """

    beams: int = 32
    azimuth_step_deg: float = 0.4
    vertical_fov_deg: float = 30.0
    azimuth_fov_deg: float = 90.0
    azimuth_center_deg: float = 0.0
    range_sigma_m: float = 0.01
    max_range_m: float = 60.0
    drop_prob: float = 0.02
    origin: tuple[float, float, float] = (0.0, 0.0, 1.2)

    def __post_init__(self):
        if self.beams < 1:
            raise InvalidInputError("need at least one beam")
        if self.range_sigma_m < 0:
            raise InvalidInputError("range noise sigma must be >= 0")

    def ray_directions(self) -> np.ndarray:
        """Unit directions for every (beam, azimuth) pair, (r, 3)."""
        half_v = np.radians(self.vertical_fov_deg) / 2.0
        elev = np.linspace(-half_v, half_v, self.beams)
        n_az = max(1, int(round(self.azimuth_fov_deg / self.azimuth_step_deg)))
        az0 = np.radians(self.azimuth_center_deg - self.azimuth_fov_deg / 2.0)
        azim = az0 + np.radians(self.azimuth_step_deg) * np.arange(n_az)
        ee, aa = np.meshgrid(elev, azim, indexing="ij")
        return np.stack([np.cos(ee) * np.cos(aa),
                         np.cos(ee) * np.sin(aa),
                         np.sin(ee)], axis=-1).reshape(-1, 3)


def intersect_rays_capsules(origin: np.ndarray, dirs: np.ndarray,
                            seg_a: np.ndarray, seg_b: np.ndarray,
                            radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First hit of unit-direction rays against a set of capsules.

    Returns (t, index): ray parameter of the nearest hit (inf for a
    miss) and the capsule index that was hit (-1 for a miss). The test
    covers the cylindrical band and both sphere caps; taking the minimum
    over the three candidate sets yields the true entry point.
    """
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = dirs.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_idx = np.full(n_rays, -1, dtype=np.int64)
    for ci in range(seg_a.shape[0]):
        a, b, r = seg_a[ci], seg_b[ci], radii[ci]
        axis = b - a
        length = np.linalg.norm(axis)
        t_cand = np.full(n_rays, np.inf)
        if length > 1e-12:
            u = axis / length
            m = origin - a
            d_par = dirs @ u
            m_par = m @ u
            d_perp = dirs - d_par[:, None] * u
            m_perp = m - m_par * u
            qa = (d_perp * d_perp).sum(axis=1)
            qb = 2.0 * d_perp @ m_perp
            qc = m_perp @ m_perp - r * r
            disc = qb * qb - 4.0 * qa * qc
            ok = (disc >= 0.0) & (qa > 1e-14)
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t_cyl = np.where(ok, (-qb - sq) / (2.0 * np.where(ok, qa, 1.0)), np.inf)
            s = m_par + np.where(ok, t_cyl, 0.0) * d_par
            valid = ok & (t_cyl > _T_MIN) & (s >= 0.0) & (s <= length)
            t_cand = np.where(valid, t_cyl, np.inf)
        for cap in (a, b):
            m = origin - cap
            qb = 2.0 * dirs @ m
            qc = m @ m - r * r
            disc = qb * qb - 4.0 * qc
            ok = disc >= 0.0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t_sph = np.where(ok, (-qb - sq) / 2.0, np.inf)
            t_sph = np.where(t_sph > _T_MIN, t_sph, np.inf)
            t_cand = np.minimum(t_cand, t_sph)
        closer = t_cand < best_t
        best_t = np.where(closer, t_cand, best_t)
        best_idx = np.where(closer, ci, best_idx)
    return best_t, best_idx


def simulate_lidar(posed: list[tuple[Pose3D, BodyModel]], cfg: LidarConfig,
                   seed: int, spec: SkeletonSpec | None = None):
    """Ray-cast one LiDAR frame over all bodies.

    Returns (points (m, 3), labels (m,)) where labels index the person
    each return came from. Ranges get Gaussian noise and points drop out
    i.i.d. per the config.
    """
    caps_a, caps_b, caps_r, owner = [], [], [], []
    for pid, (pose, body) in enumerate(posed):
        a, b, r = capsules_for(pose, body, spec)
        caps_a.append(a)
        caps_b.append(b)
        caps_r.append(r)
        owner.append(np.full(len(r), pid))
    origin = np.asarray(cfg.origin, dtype=np.float64)
    dirs = cfg.ray_directions()
    if not caps_a:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    t, idx = intersect_rays_capsules(origin, dirs,
                                     np.concatenate(caps_a),
                                     np.concatenate(caps_b),
                                     np.concatenate(caps_r))
    owner = np.concatenate(owner)
    hit = np.isfinite(t) & (t <= cfg.max_range_m)
    t, dirs, idx = t[hit], dirs[hit], idx[hit]
    rng = np.random.Generator(np.random.PCG64(seed))
    t = t + rng.normal(0.0, cfg.range_sigma_m, size=t.shape) if cfg.range_sigma_m > 0 else t
    keep = rng.random(t.shape) >= cfg.drop_prob if cfg.drop_prob > 0 else np.ones(t.shape, bool)
    points = origin + t[keep, None] * dirs[keep]
    return points, owner[idx[keep]]


def render_raster(posed: list[tuple[Pose3D, BodyModel]], calib: Calibration,
                  height: int, width: int,
                  spec: SkeletonSpec | None = None) -> np.ndarray:
    """Render the capsule scene into an (h, w, 3) float32 raster.

    Channels: inverse camera depth (0 where empty), silhouette mask, and
    a per-person hue (pid + 1) / (n_persons + 1).
    """
    raster = np.zeros((height, width, 3), dtype=np.float32)
    if not posed:
        return raster
    caps_a, caps_b, caps_r, owner = [], [], [], []
    for pid, (pose, body) in enumerate(posed):
        a, b, r = capsules_for(pose, body, spec)
        caps_a.append(a)
        caps_b.append(b)
        caps_r.append(r)
        owner.append(np.full(len(r), pid))
    owner = np.concatenate(owner)

    us, vs = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    cam_dirs = np.stack([(us.ravel() - calib.cx) / calib.fx,
                         (vs.ravel() - calib.cy) / calib.fy,
                         np.ones(us.size)], axis=1)
    world_dirs = cam_dirs @ calib.rotation  # R^T applied row-wise
    norms = np.linalg.norm(world_dirs, axis=1, keepdims=True)
    world_dirs = world_dirs / norms
    origin = calib.camera_center_world()
    t, idx = intersect_rays_capsules(origin, world_dirs,
                                     np.concatenate(caps_a),
                                     np.concatenate(caps_b),
                                     np.concatenate(caps_r))
    hit = np.isfinite(t)
    pts = origin + t[hit, None] * world_dirs[hit]
    z = (pts @ calib.rotation.T + calib.translation)[:, 2]
    pid = owner[idx[hit]]
    flat = np.zeros((height * width, 3), dtype=np.float32)
    flat[hit, 0] = 1.0 / z
    flat[hit, 1] = 1.0
    flat[hit, 2] = (pid + 1.0) / (len(posed) + 1.0)
    return flat.reshape(height, width, 3)


def simulate_2d(pose: Pose3D, calib: Calibration, noise_sigma: float,
                drop_prob: float, seed: int) -> Pose2D:
    """Noisy 2D keypoints: projection plus pixel noise and random drops.

    Joints behind the camera are always invisible.
    """
    pixels, valid = project(pose.joints, calib)
    rng = np.random.Generator(np.random.PCG64(seed))
    noisy = pixels + rng.normal(0.0, noise_sigma, size=pixels.shape)
    dropped = rng.random(len(pixels)) < drop_prob
    visible = valid & ~dropped
    noisy[~valid] = 0.0
    return Pose2D(noisy, visible)


@dataclass(frozen=True)
class DetectionJitter:
    """Noise applied to the simulated detector outputs."""

    center_sigma_m: float = 0.03
    box2d_sigma_px: float = 1.0


def simulate_detections(pose: Pose3D, person_points: np.ndarray,
                        calib: Calibration, jitter: DetectionJitter,
                        seed: int, inflate3d: float = 0.10,
                        inflate2d: float = 0.15) -> tuple[Detection2D | None, Detection3D | None]:
    """Detector stand-in for one person in one frame.

    The 3D box is the labeled-point bounding box inflated ``inflate3d``
    with a jittered center; the 2D box is the projected-joint bounding
    rectangle inflated ``inflate2d`` with jittered corners. A person with
    no LiDAR points gets no 3D detection that frame.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    det3d = None
    if len(person_points):
        lo = person_points.min(axis=0)
        hi = person_points.max(axis=0)
        center = (lo + hi) / 2.0 + rng.normal(0.0, jitter.center_sigma_m, size=3)
        size = np.maximum((hi - lo) * (1.0 + inflate3d), 0.05)
        det3d = Detection3D(tuple(center), tuple(size), yaw=0.0)

    det2d = None
    pixels, valid = project(pose.joints, calib)
    if valid.any():
        pix = pixels[valid]
        u0, v0 = pix.min(axis=0)
        u1, v1 = pix.max(axis=0)
        du, dv = (u1 - u0) * inflate2d / 2.0, (v1 - v0) * inflate2d / 2.0
        box = np.array([u0 - du, v0 - dv, u1 + du, v1 + dv])
        box += rng.normal(0.0, jitter.box2d_sigma_px, size=4)
        if box[0] < box[2] and box[1] < box[3]:
            score = float(np.clip(rng.normal(0.9, 0.05), 0.0, 1.0))
            det2d = Detection2D(tuple(box), score)
    return det2d, det3d


def occlude_points(points: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Uniformly drop floor(fraction * n) points, seeded and order-preserving."""
    if not 0.0 <= fraction < 1.0:
        raise InvalidInputError(f"occlusion fraction {fraction} outside [0, 1)")
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    k = int(np.floor(fraction * n))
    if k == 0:
        return points.copy()
    rng = np.random.Generator(np.random.PCG64(seed))
    drop = rng.choice(n, size=k, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[drop] = False
    return points[keep].copy()
