"""Camera ray model, pixel grid, neighborhoods and 3D/depth conversions.

Depths are metric distances along unit-length viewing rays, so a pixel's
3D point is ``ori + d * dir``.  All rays and points live in the camera
frame; the extrinsic pose maps range-sensor coordinates into that frame.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

PINHOLE = "pinhole"
ORTHOGRAPHIC = "orthographic"


@dataclass(frozen=True)
class ImageGrid:
    """Pixel raster addressed either as (row, col) or as a linear index."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ConfigurationError(
                f"grid must be at least 3x3, got {self.width}x{self.height}")

    @property
    def num_pixels(self):
        return self.width * self.height

    @property
    def shape(self):
        return (self.height, self.width)

    def index(self, row, col):
        return row * self.width + col

    def row_col(self, index):
        return divmod(index, self.width)

    def contains(self, row, col):
        return 0 <= row < self.height and 0 <= col < self.width


def _unit_quaternion_to_matrix(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0:
        raise ConfigurationError("extrinsic quaternion must be nonzero")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class CameraModel:
    """Central (pinhole) or orthographic camera plus sensor-to-camera pose.

    For pinhole cameras ``fx, fy`` are focal lengths in pixels.  For
    orthographic cameras they are pixels per meter, i.e. the reciprocal
    pixel pitch.  ``rotation``/``translation`` map sensor-frame points into
    the camera frame: ``p_cam = R @ p_sensor + t``.
    """

    kind: str = PINHOLE
    fx: float = 1.0
    fy: float = 1.0
    cx: float = 0.0
    cy: float = 0.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in (PINHOLE, ORTHOGRAPHIC):
            raise ConfigurationError(f"unknown camera kind {self.kind!r}")
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError("focal lengths must be positive")
        R = np.asarray(self.rotation, dtype=float)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float))
        if R.shape != (3, 3) or \
                not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or \
                abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ConfigurationError(
                "extrinsic rotation must be orthonormal with det +1")

    @classmethod
    def from_quaternion(cls, kind, fx, fy, cx, cy,
                        quaternion_wxyz=(1.0, 0.0, 0.0, 0.0),
                        translation=(0.0, 0.0, 0.0)):
        return cls(kind=kind, fx=fx, fy=fy, cx=cx, cy=cy,
                   rotation=_unit_quaternion_to_matrix(quaternion_wxyz),
                   translation=np.asarray(translation, dtype=float))

    def to_camera_frame(self, points_sensor):
        p = np.atleast_2d(np.asarray(points_sensor, dtype=float))
        return p @ self.rotation.T + self.translation

    def to_sensor_frame(self, points_camera):
        p = np.atleast_2d(np.asarray(points_camera, dtype=float))
        return (p - self.translation) @ self.rotation


@dataclass(frozen=True)
class RayField:
    """Per-pixel viewing-ray origins and unit directions (camera frame)."""

    grid: ImageGrid
    origins: np.ndarray    # (H, W, 3)
    directions: np.ndarray  # (H, W, 3), unit norm

    def origin(self, pixel):
        r, c = self.grid.row_col(pixel)
        return self.origins[r, c]

    def direction(self, pixel):
        r, c = self.grid.row_col(pixel)
        return self.directions[r, c]

    def flat_origins(self):
        return self.origins.reshape(-1, 3)

    def flat_directions(self):
        return self.directions.reshape(-1, 3)


@dataclass
class DepthField:
    """Per-pixel depth estimates plus a validity mask."""

    grid: ImageGrid
    depths: np.ndarray  # (H, W) float
    valid: np.ndarray   # (H, W) bool

    @classmethod
    def full(cls, grid, value):
        return cls(grid, np.full(grid.shape, float(value)),
                   np.ones(grid.shape, dtype=bool))

    def copy(self):
        return DepthField(self.grid, self.depths.copy(), self.valid.copy())

    def vector(self):
        """Depths flattened to the optimization parameter layout."""
        return self.depths.reshape(-1).copy()

    def check(self):
        d = self.depths[self.valid]
        if d.size and not (np.all(np.isfinite(d)) and np.all(d > 0)):
            raise ConfigurationError("valid depths must be finite and > 0")


def pixel_centers(grid):
    """Continuous (u, v) image coordinates of all pixel centers.

    u runs along columns, v along rows; pixel (row, col) is centered at
    (u, v) = (col, row).
    """
    v, u = np.mgrid[0:grid.height, 0:grid.width]
    return u.astype(float), v.astype(float)


def ray_through(camera, u, v):
    """Origin and unit direction of the ray through image coords (u, v)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if camera.kind == PINHOLE:
        x = (u - camera.cx) / camera.fx
        y = (v - camera.cy) / camera.fy
        d = np.stack([x, y, np.ones_like(x)], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        o = np.zeros_like(d)
    else:
        o = np.stack([(u - camera.cx) / camera.fx,
                      (v - camera.cy) / camera.fy,
                      np.zeros_like(u)], axis=-1)
        d = np.zeros_like(o)
        d[..., 2] = 1.0
    return o, d


def build_ray_field(camera, grid):
    """One viewing ray per pixel center."""
    u, v = pixel_centers(grid)
    origins, directions = ray_through(camera, u, v)
    return RayField(grid, origins, directions)


def point_from_depth(rays, pixel, depth):
    """3D point at ``depth`` along the pixel's viewing ray."""
    return rays.origin(pixel) + depth * rays.direction(pixel)


def points_from_depths(rays, depths_flat):
    """Vectorized ray evaluation for a full depth vector."""
    return rays.flat_origins() + \
        depths_flat[:, None] * rays.flat_directions()


def project_camera_point(camera, grid, point_camera):
    """Project a camera-frame point to continuous pixel coords and depth.

    Returns ``(u, v, depth)`` with depth measured along the viewing ray
    through (u, v), or ``None`` if the point is behind the camera, at the
    optical center, or projects outside the grid.
    """
    p = np.asarray(point_camera, dtype=float)
    if camera.kind == PINHOLE:
        if p[2] <= 0:
            return None
        norm = np.linalg.norm(p)
        if norm == 0:
            return None
        u = camera.fx * p[0] / p[2] + camera.cx
        v = camera.fy * p[1] / p[2] + camera.cy
        depth = norm
    else:
        if p[2] <= 0:
            return None
        u = camera.fx * p[0] + camera.cx
        v = camera.fy * p[1] + camera.cy
        depth = p[2]
    if not (-0.5 <= u < grid.width - 0.5 and -0.5 <= v < grid.height - 0.5):
        return None
    return u, v, depth


def project_point(camera, grid, point_sensor):
    """Project a sensor-frame point; applies the extrinsic pose first."""
    p_cam = camera.to_camera_frame(point_sensor)[0]
    return project_camera_point(camera, grid, p_cam)


def neighbors4(grid, pixel):
    """Existing 4-connected neighbors of a pixel, as linear indices."""
    r, c = grid.row_col(pixel)
    out = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        rr, cc = r + dr, c + dc
        if grid.contains(rr, cc):
            out.append(grid.index(rr, cc))
    return out

def collinearity_triples(grid, pixel):
    """Axis-aligned (j, i, k) triples centered at ``pixel``.

    The horizontal triple is (left, i, right), the vertical one
    (up, i, down); a triple exists only when both outer pixels do.
    """
    r, c = grid.row_col(pixel)
    triples = []
    if 0 < c < grid.width - 1:
        triples.append((grid.index(r, c - 1), pixel, grid.index(r, c + 1)))
    if 0 < r < grid.height - 1:
        triples.append((grid.index(r - 1, c), pixel, grid.index(r + 1, c)))
    return triples


def all_collinearity_triples(grid):
    """All triples of the grid as an (n, 3) index array, row-major order.

    For each pixel the horizontal triple precedes the vertical one; the
    total count is (W-2)*H + W*(H-2).
    """
    out = []
    for pixel in range(grid.num_pixels):
        out.extend(collinearity_triples(grid, pixel))
    if not out:
        return np.zeros((0, 3), dtype=np.int64)
    return np.asarray(out, dtype=np.int64)


def neighbor_pairs(grid):
    """All ordered 4-neighbor pairs (i, n) as an (m, 2) index array."""
    out = []
    for pixel in range(grid.num_pixels):
        for n in neighbors4(grid, pixel):
            out.append((pixel, n))
    return np.asarray(out, dtype=np.int64)
