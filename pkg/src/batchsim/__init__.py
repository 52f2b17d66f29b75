"""Batch simulation, batch rendering and large-batch PPO for 3D navigation."""

__version__ = "0.1.0"
