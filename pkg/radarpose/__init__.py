"""radarpose - radar heatmaps to multi-frame 2D human pose."""

__version__ = "0.1.0"
