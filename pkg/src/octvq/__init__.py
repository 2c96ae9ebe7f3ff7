"""Octree + projection + VQ point cloud geometry codec."""

from octvq.config import CodecConfig
from octvq.pointcloud import PointCloud

__version__ = "0.1.0"

__all__ = ["CodecConfig", "PointCloud", "__version__"]
