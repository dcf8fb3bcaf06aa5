from .fileio import FrameFormatError, export_text, list_frames, read_frame, write_frame
from .frame import CLASS_NAMES, PointCloudFrame
from .synthetic import (
    SceneConfig,
    SceneGenerationError,
    downsample_points,
    frame_seed,
    generate_synthetic_scene,
    normalized_part_location,
    plane_ground_height,
    synthetic_frames,
)
from .voxel import FRONT_VIEW, FULL_RANGE, VoxelGridSpec, VoxelizedFrame, gather_mean, scatter_to_points, voxelize

__all__ = [
    "CLASS_NAMES",
    "FRONT_VIEW",
    "FULL_RANGE",
    "FrameFormatError",
    "PointCloudFrame",
    "SceneConfig",
    "SceneGenerationError",
    "VoxelGridSpec",
    "VoxelizedFrame",
    "downsample_points",
    "export_text",
    "frame_seed",
    "gather_mean",
    "generate_synthetic_scene",
    "list_frames",
    "normalized_part_location",
    "plane_ground_height",
    "read_frame",
    "scatter_to_points",
    "synthetic_frames",
    "voxelize",
    "write_frame",
]
