"""Keypoint-guided lidar point cloud sampling and scan-to-map ICP odometry."""

__version__ = "0.1.0"

from .core import (
    GrayImage,
    ImageVariant,
    LidarFrame,
    PointCloud,
    Pose,
    RgbImage,
    VariantKind,
)

__all__ = [
    "GrayImage",
    "RgbImage",
    "PointCloud",
    "LidarFrame",
    "ImageVariant",
    "VariantKind",
    "Pose",
    "__version__",
]
