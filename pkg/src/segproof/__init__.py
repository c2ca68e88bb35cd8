"""segproof: detection and guided correction of split/merge segmentation errors."""

__version__ = "0.1.0"
