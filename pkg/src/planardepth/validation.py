"""Input validation helpers for the estimator and file front-ends."""

import numpy as np


def check_pixel_coords(X, grid):
    """(n, 2) integer (row, col) array, bounds-checked against the grid."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"expected (n, 2) pixel coordinates, got {X.shape}")
    if not np.issubdtype(X.dtype, np.integer):
        rounded = np.rint(X)
        if not np.allclose(X, rounded):
            raise ValueError("pixel coordinates must be integral")
        X = rounded
    X = X.astype(np.int64)
    if len(X) and (X[:, 0].min() < 0 or X[:, 0].max() >= grid.height
                   or X[:, 1].min() < 0 or X[:, 1].max() >= grid.width):
        raise ValueError("pixel coordinates outside the grid")
    return X


def check_depth_values(y, n=None):
    y = np.asarray(y, dtype=float).reshape(-1)
    if n is not None and len(y) != n:
        raise ValueError(f"expected {n} depth values, got {len(y)}")
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise ValueError("depths must be finite and positive")
    return y


def check_guide_image(image, grid=None):
    """RGB guide image as (H, W, 3) floats in [0, 1]."""
    arr = np.asarray(image, dtype=float)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {arr.shape}")
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("guide image values must lie in [0, 1]")
    if grid is not None and arr.shape[:2] != grid.shape:
        raise ValueError(
            f"image shape {arr.shape[:2]} does not match grid {grid.shape}")
    return arr
