"""Occlusion-aware temporal refinement of keypoint heatmap videos."""

__version__ = "0.1.0"
