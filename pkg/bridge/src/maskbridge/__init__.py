"""File-based exporters feeding neural descriptors and dense flow into the
change detection pipeline."""

__version__ = "0.1.0"
