"""Image features, regularization weights and PCA surface normals."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

EXPONENTIAL = "exponential"
SIGMOID = "sigmoid"
STEP = "step"
CONSTANT = "constant"

# Floor for the step kind; keeps the residual graph connected so that the
# confidence module, not the weights, decides what is decoupled.
STEP_FLOOR = 1e-3

# Default exponential scale: an RGB step of 0.2 (squared 0.04) at full
# certainty halves the weight.
DEFAULT_ALPHA = float(np.log(2.0) / 0.04)

# Neighborhoods whose two smallest covariance eigenvalues are within a
# factor 2 of each other have no stable normal direction.
DEGENERACY_RATIO = 0.5


@dataclass(frozen=True)
class FeatureImage:
    """Per-pixel RGB in [0,1] and semantic certainty in [0,1]."""

    grid: "ImageGrid"
    rgb: np.ndarray                 # (H, W, 3)
    semantic_certainty: np.ndarray = None  # (H, W), defaults to 1

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=float)
        if rgb.shape != (self.grid.height, self.grid.width, 3):
            raise ValueError(f"rgb shape {rgb.shape} does not match grid")
        if rgb.min() < 0 or rgb.max() > 1:
            raise ValueError("rgb channels must lie in [0, 1]")
        object.__setattr__(self, "rgb", rgb)
        cert = self.semantic_certainty
        if cert is None:
            cert = np.ones(self.grid.shape)
        cert = np.asarray(cert, dtype=float)
        if cert.shape != self.grid.shape:
            raise ValueError("certainty shape does not match grid")
        if cert.min() < 0 or cert.max() > 1:
            raise ValueError("semantic certainty must lie in [0, 1]")
        object.__setattr__(self, "semantic_certainty", cert)

    @classmethod
    def flat(cls, grid, rgb=(0.5, 0.5, 0.5)):
        img = np.broadcast_to(np.asarray(rgb, dtype=float),
                              (grid.height, grid.width, 3)).copy()
        return cls(grid, img)


@dataclass(frozen=True)
class WeightFunction:
    """Non-increasing map g: [0, inf) -> (0, 1] with g(0) = 1."""

    kind: str = EXPONENTIAL
    alpha: float = DEFAULT_ALPHA
    tau: float = 0.0

    def __post_init__(self):
        if self.kind not in (EXPONENTIAL, SIGMOID, STEP, CONSTANT):
            raise ValueError(f"unknown weight function kind {self.kind!r}")
        if self.alpha <= 0:
            raise ValueError("weight scale alpha must be positive")
        if self.tau < 0:
            raise ValueError("weight threshold tau must be non-negative")
        if self.kind == STEP and self.tau == 0:
            raise ValueError("step kind needs tau > 0 to keep g(0) = 1")

    def __call__(self, x):
        return eval_weight_function(self, x)


def eval_weight_function(g, x):
    """Evaluate a weight function at non-negative ``x`` (scalar or array)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("weight function argument must be non-negative")
    if g.kind == CONSTANT:
        out = np.ones_like(x)
    elif g.kind == EXPONENTIAL:
        out = np.exp(-g.alpha * x)
    elif g.kind == SIGMOID:
        # Logistic falloff rescaled so the value at 0 is exactly 1.
        e0 = np.exp(np.clip(-g.alpha * g.tau, -700, 700))
        ex = np.exp(np.clip(g.alpha * (x - g.tau), -700, 700))
        out = (1.0 + e0) / (1.0 + ex)
    else:
        out = np.where(x < g.tau, 1.0, STEP_FLOOR)
    return out if out.ndim else float(out)


def semantic_certainty(p_max, num_classes):
    """Normalized improvement of the top class probability over guessing."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    p = np.asarray(p_max, dtype=float)
    lo = 1.0 / num_classes
    if np.any(p < lo - 1e-12) or np.any(p > 1.0 + 1e-12):
        raise ValueError(
            f"top probability must lie in [1/{num_classes}, 1]")
    out = np.clip((num_classes * p - 1.0) / (num_classes - 1.0), 0.0, 1.0)
    return out if out.ndim else float(out)


def pairwise_weight(features, g, i, j):
    """Weight between 4-neighbors i and j.

    The squared RGB distance is scaled by the semantic certainty at the
    *first* pixel, so the weight is asymmetric in (i, j).
    """
    ri, ci = features.grid.row_col(i)
    rj, cj = features.grid.row_col(j)
    delta = features.rgb[ri, ci] - features.rgb[rj, cj]
    arg = float(delta @ delta) * features.semantic_certainty[ri, ci]
    return eval_weight_function(g, arg)


# Direction offsets used for the (H, W, 4) weight layout.
_DIRS = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right
UP, DOWN, LEFT, RIGHT = range(4)


@dataclass(frozen=True)
class WeightField:
    """Weights for every ordered 4-neighbor pair, indexed by direction.

    ``pair[r, c, d]`` is the weight from pixel (r, c) to its neighbor in
    direction d; entries without a neighbor are NaN.
    """

    grid: "ImageGrid"
    pair: np.ndarray  # (H, W, 4)

    def weight(self, i, j):
        ri, ci = self.grid.row_col(i)
        rj, cj = self.grid.row_col(j)
        d = _DIRS.index((rj - ri, cj - ci))
        return float(self.pair[ri, ci, d])


def compute_weight_field(features, g):
    """All ordered pairwise weights of the 4-connected grid, vectorized."""
    grid = features.grid
    h, w = grid.shape
    rgb = features.rgb
    cert = features.semantic_certainty
    pair = np.full((h, w, 4), np.nan)
    for d, (dr, dc) in enumerate(_DIRS):
        src_r = slice(max(0, -dr), h - max(0, dr))
        src_c = slice(max(0, -dc), w - max(0, dc))
        dst_r = slice(max(0, dr), h - max(0, -dr))
        dst_c = slice(max(0, dc), w - max(0, -dc))
        delta = rgb[src_r, src_c] - rgb[dst_r, dst_c]
        arg = np.einsum("ijk,ijk->ij", delta, delta) * cert[src_r, src_c]
        pair[src_r, src_c, d] = eval_weight_function(g, arg)
    return WeightField(grid, pair)


def constant_weight_field(grid, value=1.0):
    pair = np.full((grid.height, grid.width, 4), float(value))
    pair[0, :, UP] = np.nan
    pair[-1, :, DOWN] = np.nan
    pair[:, 0, LEFT] = np.nan
    pair[:, -1, RIGHT] = np.nan
    return WeightField(grid, pair)


def triple_weight(pairs, triple):
    """Weight of a collinearity triple: product of its two pair weights."""
    j, i, k = triple
    return pairs.weight(i, j) * pairs.weight(i, k)


@dataclass
class NormalSet:
    """Per-point unit surface normals with validity flags."""

    normals: np.ndarray  # (n, 3)
    valid: np.ndarray    # (n,) bool


def depth_map_normals(rays, depths):
    """Per-pixel normals of a depth image from central differences.

    Uses the cross product of the horizontal and vertical 3D tangents
    (one-sided at the borders), oriented toward the ray origins.  Pixels
    with a degenerate tangent pair get a zero normal.
    """
    depths = np.asarray(depths, dtype=float)
    pts = rays.origins + depths[:, :, None] * rays.directions
    du = np.empty_like(pts)
    du[:, 1:-1] = pts[:, 2:] - pts[:, :-2]
    du[:, 0] = pts[:, 1] - pts[:, 0]
    du[:, -1] = pts[:, -1] - pts[:, -2]
    dv = np.empty_like(pts)
    dv[1:-1, :] = pts[2:, :] - pts[:-2, :]
    dv[0, :] = pts[1, :] - pts[0, :]
    dv[-1, :] = pts[-1, :] - pts[-2, :]
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=2)
    ok = norm > 1e-15
    n[ok] /= norm[ok][:, None]
    n[~ok] = 0.0
    flip = np.einsum("ijk,ijk->ij", n, rays.origins - pts) < 0
    n[flip] *= -1.0
    return n


def estimate_normals(points, radius, viewpoint):
    """PCA surface normals from radius neighborhoods of a point cloud.

    The normal is the eigenvector of the smallest covariance eigenvalue,
    sign-flipped to face ``viewpoint``.  Points with fewer than 3 in-radius
    neighbors, or whose two smallest eigenvalues are within a factor 2
    (no stable normal direction), are marked invalid.
    """
    if radius <= 0:
        raise ValueError("search radius must be positive")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(points)
    normals = np.zeros((n, 3))
    valid = np.zeros(n, dtype=bool)
    if n == 0:
        return NormalSet(normals, valid)
    viewpoint = np.asarray(viewpoint, dtype=float)
    tree = cKDTree(points)
    hoods = tree.query_ball_point(points, r=radius)
    for q, idx in enumerate(hoods):
        if len(idx) < 3:
            continue
        nb = points[idx]
        centered = nb - nb.mean(axis=0)
        cov = centered.T @ centered / len(idx)
        evals, evecs = np.linalg.eigh(cov)  # ascending eigenvalues
        if evals[1] <= 0 or evals[0] / evals[1] > DEGENERACY_RATIO:
            continue
        normal = evecs[:, 0]
        if normal @ (viewpoint - points[q]) < 0:
            normal = -normal
        normals[q] = normal
        valid[q] = True
    return NormalSet(normals, valid)
