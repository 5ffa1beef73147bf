"""Egocentric-to-allocentric semantic mapping on synthetic indoor scenes.

A desk-scale, end-to-end pipeline: synthetic voxel scenes are observed along
trajectories, per-frame features are projected into a bird's-eye-view grid
memory, accumulated by a bidirectional recurrent spatial memory, and decoded
into a top-down semantic map.
"""

__version__ = "0.1.0"
