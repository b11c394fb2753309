"""Part-based compact map descriptors and fast 1-to-N map matching for 2D point-set maps."""

__version__ = "0.1.0"
