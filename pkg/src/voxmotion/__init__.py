"""Voxel-grid conditioned human motion diffusion at desk scale."""

__version__ = "0.1.0"
