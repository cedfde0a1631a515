"""FusionPose: weakly-supervised 3D multi-person pose estimation from
fused LiDAR point clouds and camera images, desk-scale and self-contained."""

__version__ = "0.1.0"
