"""Depth initialization: projected observations, triangle mesh, ray-plane
intersection with nearest-neighbor fallback."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import ConfigurationError
from .geometry import DepthField, pixel_centers

# Image-space triangles thinner than this are dropped as degenerate.
MIN_TRIANGLE_AREA = 1e-9

# Rays this close to parallel with a triangle's plane fall back to the
# nearest-neighbor depth.
MIN_RAY_PLANE_DOT = 1e-12


@dataclass
class ProjectedObservations:
    """Sparse observations projected into the image plane.

    ``uv`` holds continuous pixel coordinates, ``depths`` the measured
    distance along each observation's viewing ray, ``points`` the 3D
    positions in the camera frame and ``source`` the index into whatever
    produced the observation.
    """

    uv: np.ndarray       # (n, 2) continuous pixel coords (u, v)
    depths: np.ndarray   # (n,)
    points: np.ndarray   # (n, 3) camera frame
    source: np.ndarray   # (n,) int

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        self.depths = np.asarray(self.depths, dtype=float).reshape(-1)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.source = np.asarray(self.source, dtype=np.int64).reshape(-1)
        n = len(self.uv)
        if not (len(self.depths) == len(self.points) == len(self.source) == n):
            raise ValueError("observation field lengths disagree")
        if n and np.any(self.depths <= 0):
            raise ValueError("projected observation depths must be positive")

    def __len__(self):
        return len(self.uv)

    @classmethod
    def from_pixel_observations(cls, rays, pixels, depths):
        """Observations that sit exactly on pixel-center rays."""
        pixels = np.asarray(pixels, dtype=np.int64)
        depths = np.asarray(depths, dtype=float)
        rows, cols = np.divmod(pixels, rays.grid.width)
        uv = np.stack([cols, rows], axis=1).astype(float)
        ori = rays.flat_origins()[pixels]
        dirs = rays.flat_directions()[pixels]
        points = ori + depths[:, None] * dirs
        return cls(uv, depths, points, np.arange(len(pixels)))


def build_kdtree(obs):
    """2D kd-tree over the projected pixel coordinates."""
    if len(obs) == 0:
        raise ConfigurationError(
            "cannot upsample without any depth observations")
    return cKDTree(obs.uv)


@dataclass
class TriangleMesh:
    """Image-space triangulation of the projected observations."""

    triangles: np.ndarray  # (t, 3) indices into the observation arrays
    bboxes: np.ndarray     # (t, 4) [umin, vmin, umax, vmax]

    def __len__(self):
        return len(self.triangles)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3), dtype=np.int64), np.zeros((0, 4)))


def triangulate(obs):
    """Delaunay triangulation of the projected points.

    Collinear or too-few inputs yield an empty mesh; the nearest-neighbor
    fallback covers those pixels instead.
    """
    if len(obs) < 3:
        return TriangleMesh.empty()
    try:
        tri = Delaunay(obs.uv)
    except QhullError:
        return TriangleMesh.empty()
    simplices = tri.simplices.astype(np.int64)
    a = obs.uv[simplices[:, 0]]
    b = obs.uv[simplices[:, 1]]
    c = obs.uv[simplices[:, 2]]
    area2 = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                   - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    simplices = simplices[area2 > 2 * MIN_TRIANGLE_AREA]
    if len(simplices) == 0:
        return TriangleMesh.empty()
    # Deterministic triangle order regardless of qhull internals.
    simplices = np.sort(simplices, axis=1)
    order = np.lexsort((simplices[:, 2], simplices[:, 1], simplices[:, 0]))
    simplices = simplices[order]
    pts = obs.uv[simplices]  # (t, 3, 2)
    bboxes = np.concatenate([pts.min(axis=1), pts.max(axis=1)], axis=1)
    return TriangleMesh(simplices, bboxes)


def observed_depth_bounds(depths, margin=0.0):
    """Observed depth range, optionally widened by a relative margin.

    A nonzero margin keeps near-boundary pixels feasible: regular
    sub-sampling rarely observes the extreme ray lengths of a scene, and a
    hard clamp at the observed extremes would push those pixels off
    otherwise exactly-representable surfaces.
    """
    depths = np.asarray(depths, dtype=float)
    if depths.size == 0:
        raise ConfigurationError("no observed depths to derive bounds from")
    if margin < 0:
        raise ConfigurationError("bound margin must be non-negative")
    lo = float(depths.min()) / (1.0 + margin)
    hi = float(depths.max()) * (1.0 + margin)
    if lo >= hi:  # constant-depth observations with zero margin
        lo, hi = lo * 0.5, hi * 2.0
    return lo, hi


def _plane_through(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm == 0:
        return None
    n = n / norm
    return n, float(n @ p0)


def init_depth(rays, obs, mesh, grid, bounds=None, return_coverage=False):
    """Initial DepthField from mesh intersection plus NN fallback.

    Pixels inside a projected triangle get the intersection of their
    viewing ray with the plane through the triangle's 3D points; triangles
    are scanned in index order and the first containing triangle wins.
    Remaining pixels copy the depth of the nearest projected observation.
    Results are clamped to ``bounds`` (observed depth range by default).
    With ``return_coverage`` the (H, W) mask of triangle-covered pixels is
    returned alongside the field.
    """
    if len(obs) == 0:
        raise ConfigurationError(
            "cannot initialize depth without observations")
    if bounds is None:
        bounds = observed_depth_bounds(obs.depths)
    lo, hi = bounds

    u, v = pixel_centers(grid)
    depths = np.full(grid.shape, np.nan)
    ori = rays.origins
    dirs = rays.directions

    for t in range(len(mesh)):
        ia, ib, ic = mesh.triangles[t]
        a2, b2, c2 = obs.uv[ia], obs.uv[ib], obs.uv[ic]
        umin, vmin, umax, vmax = mesh.bboxes[t]
        c0 = max(0, int(np.ceil(umin)))
        c1 = min(grid.width - 1, int(np.floor(umax)))
        r0 = max(0, int(np.ceil(vmin)))
        r1 = min(grid.height - 1, int(np.floor(vmax)))
        if c0 > c1 or r0 > r1:
            continue
        plane = _plane_through(obs.points[ia], obs.points[ib], obs.points[ic])
        if plane is None:
            continue
        normal, offset = plane

        uu = u[r0:r1 + 1, c0:c1 + 1]
        vv = v[r0:r1 + 1, c0:c1 + 1]
        # Barycentric inside-test with inclusive edges.
        det = (b2[1] - c2[1]) * (a2[0] - c2[0]) + \
              (c2[0] - b2[0]) * (a2[1] - c2[1])
        w0 = ((b2[1] - c2[1]) * (uu - c2[0])
              + (c2[0] - b2[0]) * (vv - c2[1])) / det
        w1 = ((c2[1] - a2[1]) * (uu - c2[0])
              + (a2[0] - c2[0]) * (vv - c2[1])) / det
        w2 = 1.0 - w0 - w1
        eps = 1e-12
        inside = (w0 >= -eps) & (w1 >= -eps) & (w2 >= -eps)
        unassigned = np.isnan(depths[r0:r1 + 1, c0:c1 + 1])
        sel = inside & unassigned
        if not sel.any():
            continue

        o = ori[r0:r1 + 1, c0:c1 + 1]
        d = dirs[r0:r1 + 1, c0:c1 + 1]
        denom = d @ normal
        ok = np.abs(denom) >= MIN_RAY_PLANE_DOT
        depth_t = np.where(ok, (offset - o @ normal)
                           / np.where(ok, denom, 1.0), np.nan)
        block = depths[r0:r1 + 1, c0:c1 + 1]
        block[sel] = depth_t[sel]
        depths[r0:r1 + 1, c0:c1 + 1] = block

    covered = np.isfinite(depths)
    hole = ~covered
    if hole.any():
        tree = build_kdtree(obs)
        uq = u[hole]
        vq = v[hole]
        _, nearest = tree.query(np.stack([uq, vq], axis=1))
        depths[hole] = obs.depths[nearest]

    np.clip(depths, lo, hi, out=depths)
    field = DepthField(grid, depths, np.ones(grid.shape, dtype=bool))
    if return_coverage:
        return field, covered
    return field
