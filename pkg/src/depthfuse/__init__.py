"""Joint 2D-3D fuse blocks for depth completion, built on a small numpy autodiff core."""

__version__ = "0.1.0"
