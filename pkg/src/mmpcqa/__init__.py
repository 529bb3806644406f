"""mmpcqa: multi-modal no-reference point cloud quality assessment."""

__version__ = "0.1.0"
