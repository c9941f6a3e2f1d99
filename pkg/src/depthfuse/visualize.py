"""Fixed-range depth colorization for cross-run comparable images.

The colormap interpolates linearly between these anchors over ``[0, max_depth]``
meters (near is dark blue, far is dark red); unobserved pixels are black.
"""
from __future__ import annotations

import numpy as np
from PIL import Image

ANCHORS = np.array([
    [0.00, 0, 0, 128],
    [0.15, 0, 64, 255],
    [0.35, 0, 224, 255],
    [0.50, 64, 255, 160],
    [0.65, 224, 255, 0],
    [0.85, 255, 96, 0],
    [1.00, 128, 0, 0],
], dtype=np.float64)


def colorize(depth: np.ndarray, max_depth: float = 80.0, mask: np.ndarray | None = None) -> np.ndarray:
    t = np.clip(np.asarray(depth, dtype=np.float64) / max_depth, 0.0, 1.0)
    rgb = np.stack([np.interp(t, ANCHORS[:, 0], ANCHORS[:, c]) for c in (1, 2, 3)], axis=-1)
    rgb = np.floor(rgb + 0.5).astype(np.uint8)
    if mask is not None:
        rgb[~np.asarray(mask, dtype=bool)] = 0
    return rgb


def save_colorized(depth: np.ndarray, path, max_depth: float = 80.0, mask=None) -> None:
    Image.fromarray(colorize(depth, max_depth, mask)).save(path)
