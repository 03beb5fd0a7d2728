"""Interest-point detection and description for grayscale images.

Two pipelines share the Keypoint type: a binary one (corner test on a
16-pixel circle, centroid orientation, rotated intensity-pair bits) and a
float one (difference-of-Gaussians extrema with gradient-histogram
descriptors).
"""

from storylens.keypoints.binary import detect_describe_binary, fast_corners
from storylens.keypoints.core import Keypoint, gaussian_blur
from storylens.keypoints.scalespace import detect_describe_float

__all__ = [
    "Keypoint",
    "detect_describe_binary",
    "detect_describe_float",
    "fast_corners",
    "gaussian_blur",
]
