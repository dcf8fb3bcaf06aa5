"""Multi-task lidar perception: sparse 3D UNet with point-wise heads and a BEV box detector."""

__version__ = "0.1.0"
