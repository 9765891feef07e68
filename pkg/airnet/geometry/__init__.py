"""Point clouds: file codecs, sampling and neighborhoods."""

from .pointcloud_io import PointCloud, read_point_cloud, write_point_cloud
from .sampling import centroid_center, fps, knn

__all__ = ["PointCloud", "centroid_center", "fps", "knn", "read_point_cloud", "write_point_cloud"]
