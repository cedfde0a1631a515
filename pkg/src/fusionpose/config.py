"""Run configuration: flat ``key = value`` text files with dotted keys.

Unknown keys are rejected with the offending key named; values are
coerced to the field's type. ``FUSIONPOSE_SEED`` in the environment
overrides the configured seed. Relative paths resolve against the
config file's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .model import FUSION_VARIANTS, ModelConfig
from .synthdata.generate import SceneConfig, default_calibration, default_scene
from .synthdata.sensors import DetectionJitter, LidarConfig

_ALLOWED_POINTS = (32, 64, 128, 256)


@dataclass
class RunConfig:
    seed: int = 42
    # paths
    dataset_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    # model
    n_points: int = 256
    width: int = 256
    image_hw: int = 64
    joints: int = 21
    window: int = 4
    joint_feat_dim: int = 64
    head_hidden: int = 64
    fusion: str = "ipa"
    # losses
    lambda_motion: float = 1.0
    lambda_consistency: float = 0.1
    lambda_proj: float = 1.0
    lambda_cd_agu: float = 0.5
    bone_samples: int = 3
    # optimizer / training
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 30
    batch_size: int = 8
    overfit_steps: int = 0
    warm_start_epochs: int = 0
    window_stride: int = 1
    # association
    iou_threshold: float = 0.3
    gate_distance: float = 1.0
    max_misses: int = 3
    # scene generation
    scene_persons: int = 3
    scene_frames: int = 200
    frame_rate_hz: float = 10.0
    raster_h: int = 96
    raster_w: int = 96
    kp_noise_sigma_px: float = 1.0
    joint_drop_prob: float = 0.03
    val_fraction: float = 0.3
    # lidar
    lidar_beams: int = 32
    lidar_azimuth_step_deg: float = 0.4
    lidar_vertical_fov_deg: float = 30.0
    lidar_azimuth_fov_deg: float = 90.0
    lidar_range_sigma_m: float = 0.01
    lidar_max_range_m: float = 60.0
    lidar_drop_prob: float = 0.02
    # detection jitter
    jitter_center_sigma_m: float = 0.03
    jitter_box2d_sigma_px: float = 1.0
    # ablation switches
    occlusion_fraction: float = 0.6
    point_budgets: tuple[int, ...] = (256, 128, 64, 32)
    squared_cd: bool = False
    base_dir: str = "."

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("optim.batch_size must be >= 1")
        if self.n_points not in _ALLOWED_POINTS:
            raise ConfigError(f"model.n_points must be one of {_ALLOWED_POINTS}")
        if self.window < 2:
            raise ConfigError("model.window must be >= 2")
        if self.joints != 21:
            raise ConfigError("model.joints is fixed at 21 for this skeleton")
        if self.fusion not in FUSION_VARIANTS:
            raise ConfigError(f"model.fusion must be one of {FUSION_VARIANTS}")
        if self.window_stride < 1:
            raise ConfigError("train.window_stride must be >= 1")

    # -- derived objects ----------------------------------------------------

    def path(self, name: str) -> Path:
        return (Path(self.base_dir) / getattr(self, name)).resolve()

    def model_config(self, fusion: str | None = None,
                     n_points: int | None = None) -> ModelConfig:
        return ModelConfig(
            n_points=n_points or self.n_points,
            width=self.width,
            image_hw=self.image_hw,
            n_joints=self.joints,
            window=self.window,
            joint_feat_dim=self.joint_feat_dim,
            head_hidden=self.head_hidden,
            fusion=fusion or self.fusion,
        )

    def loss_weights(self, overrides: dict[str, float] | None = None) -> LossWeights:
        values = dict(motion=self.lambda_motion, consistency=self.lambda_consistency,
                      proj=self.lambda_proj, cd_agu=self.lambda_cd_agu)
        values.update(overrides or {})
        return LossWeights(**values)

    def scene_config(self) -> SceneConfig:
        lidar = LidarConfig(
            beams=self.lidar_beams,
            azimuth_step_deg=self.lidar_azimuth_step_deg,
            vertical_fov_deg=self.lidar_vertical_fov_deg,
            azimuth_fov_deg=self.lidar_azimuth_fov_deg,
            range_sigma_m=self.lidar_range_sigma_m,
            max_range_m=self.lidar_max_range_m,
            drop_prob=self.lidar_drop_prob,
        )
        jitter = DetectionJitter(self.jitter_center_sigma_m, self.jitter_box2d_sigma_px)
        return default_scene(
            n_persons=self.scene_persons,
            frames=self.scene_frames,
            seed=self.seed,
            frame_rate_hz=self.frame_rate_hz,
            raster_h=self.raster_h,
            raster_w=self.raster_w,
            calibration=default_calibration(self.raster_w, self.raster_h),
            lidar=lidar,
            jitter=jitter,
            kp_noise_sigma_px=self.kp_noise_sigma_px,
            joint_drop_prob=self.joint_drop_prob,
            val_fraction=self.val_fraction,
        )


_KEY_MAP = {
    "seed": "seed",
    "paths.dataset_dir": "dataset_dir",
    "paths.checkpoint_dir": "checkpoint_dir",
    "paths.report_dir": "report_dir",
    "model.n_points": "n_points",
    "model.width": "width",
    "model.image_hw": "image_hw",
    "model.joints": "joints",
    "model.window": "window",
    "model.joint_feat_dim": "joint_feat_dim",
    "model.head_hidden": "head_hidden",
    "model.fusion": "fusion",
    "loss.lambda_motion": "lambda_motion",
    "loss.lambda_consistency": "lambda_consistency",
    "loss.lambda_proj": "lambda_proj",
    "loss.lambda_cd_agu": "lambda_cd_agu",
    "loss.bone_samples": "bone_samples",
    "optim.step_size": "step_size",
    "optim.beta1": "beta1",
    "optim.beta2": "beta2",
    "optim.epochs": "epochs",
    "optim.batch_size": "batch_size",
    "optim.overfit_steps": "overfit_steps",
    "optim.warm_start_epochs": "warm_start_epochs",
    "train.window_stride": "window_stride",
    "assoc.iou_threshold": "iou_threshold",
    "assoc.gate_distance": "gate_distance",
    "assoc.max_misses": "max_misses",
    "scene.persons": "scene_persons",
    "scene.frames": "scene_frames",
    "scene.frame_rate_hz": "frame_rate_hz",
    "scene.raster_h": "raster_h",
    "scene.raster_w": "raster_w",
    "scene.kp_noise_sigma_px": "kp_noise_sigma_px",
    "scene.joint_drop_prob": "joint_drop_prob",
    "scene.val_fraction": "val_fraction",
    "lidar.beams": "lidar_beams",
    "lidar.azimuth_step_deg": "lidar_azimuth_step_deg",
    "lidar.vertical_fov_deg": "lidar_vertical_fov_deg",
    "lidar.azimuth_fov_deg": "lidar_azimuth_fov_deg",
    "lidar.range_sigma_m": "lidar_range_sigma_m",
    "lidar.max_range_m": "lidar_max_range_m",
    "lidar.drop_prob": "lidar_drop_prob",
    "jitter.center_sigma_m": "jitter_center_sigma_m",
    "jitter.box2d_sigma_px": "jitter_box2d_sigma_px",
    "ablate.occlusion_fraction": "occlusion_fraction",
    "ablate.point_budgets": "point_budgets",
    "eval.squared_cd": "squared_cd",
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(field_name: str, raw: str):
    ftype = _FIELD_TYPES[field_name]
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if ftype == "tuple[int, ...]":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{field_name}: cannot parse {raw!r}") from exc


def parse_config_text(text: str, base_dir: str = ".") -> RunConfig:
    values: dict[str, object] = {"base_dir": base_dir}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        if key not in _KEY_MAP:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        field_name = _KEY_MAP[key]
        values[field_name] = _coerce(field_name, rhs)
    return RunConfig(**values)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config_text(path.read_text(), base_dir=str(path.parent))
    env_seed = os.environ.get("FUSIONPOSE_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"FUSIONPOSE_SEED={env_seed!r} is not an integer") from exc
    return cfg
