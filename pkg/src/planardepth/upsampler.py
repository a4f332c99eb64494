"""Pipeline orchestration and the scikit-learn style estimator."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .confidence import estimate_variances, filter_depths
from .errors import ConfigurationError
from .features import (DEFAULT_ALPHA, FeatureImage, WeightFunction,
                       compute_weight_field)
from .geometry import (ORTHOGRAPHIC, CameraModel, ImageGrid,
                       build_ray_field)
from .prior import (ProjectedObservations, init_depth,
                    observed_depth_bounds, triangulate)
from .problem import ObservationSet, ProblemConfig, assemble
from .solver import SolverConfig, solve
from .validation import (check_depth_values, check_guide_image,
                         check_pixel_coords)


@dataclass
class UpsampleResult:
    depth: "DepthField"          # after confidence filtering, if any
    raw_depth: "DepthField"      # solver output before filtering
    confidence: object           # ConfidenceField or None
    report: object               # SolveReport
    graph: object
    rays: object


def observations_from_cloud(camera, grid, points_sensor, normals=None):
    """Project a sensor-frame cloud into the image.

    Returns the in-view ``ProjectedObservations`` plus per-point nearest
    pixel indices and camera-frame normals (rotated, oriented toward the
    ray origins) aligned with them.
    """
    pts = np.asarray(points_sensor, dtype=float).reshape(-1, 3)
    p_cam = camera.to_camera_frame(pts)
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        if camera.kind == ORTHOGRAPHIC:
            u = camera.fx * x + camera.cx
            v = camera.fy * y + camera.cy
            depth = z
        else:
            u = camera.fx * x / z + camera.cx
            v = camera.fy * y / z + camera.cy
            depth = np.linalg.norm(p_cam, axis=1)
    ok = (z > 0) & np.isfinite(u) & np.isfinite(v) \
        & (u >= -0.5) & (u < grid.width - 0.5) \
        & (v >= -0.5) & (v < grid.height - 0.5) & (depth > 0)
    idx = np.flatnonzero(ok)
    proj = ProjectedObservations(
        uv=np.stack([u[idx], v[idx]], axis=1), depths=depth[idx],
        points=p_cam[idx], source=idx)
    pix_r = np.rint(v[idx]).astype(np.int64)
    pix_c = np.rint(u[idx]).astype(np.int64)
    pixels = pix_r * grid.width + pix_c

    normals_cam = None
    if normals is not None:
        normals = np.asarray(normals, dtype=float).reshape(-1, 3)
        normals_cam = normals[idx] @ camera.rotation.T
        # Orient toward the viewing-ray origins.
        ori = np.zeros_like(p_cam[idx])
        if camera.kind == ORTHOGRAPHIC:
            ori = p_cam[idx].copy()
            ori[:, 2] = 0.0
        flip = np.einsum("ij,ij->i", normals_cam,
                         ori - p_cam[idx]) < 0
        normals_cam[flip] *= -1.0
    return proj, pixels, normals_cam


def upsample_field(camera, grid, pixels, depths, normals=None,
                   normal_valid=None, features=None, weight_fn=None,
                   w_data=1.0, regularizer="planar",
                   bound_margin=0.5, solver_cfg=None,
                   variance_threshold=None, compute_confidence=False,
                   proj=None):
    """Full pipeline: prior, assembly, solve, optional confidence filter.

    ``proj`` overrides the projected observations used for the mesh prior
    (e.g. continuous projections of a cloud); by default the pixel-center
    observations are used.
    """
    if regularizer not in ("planar", "baseline"):
        raise ConfigurationError(f"unknown regularizer {regularizer!r}")
    rays = build_ray_field(camera, grid)
    obs = ObservationSet.build(rays, pixels, depths, normals, normal_valid)
    if features is None:
        features = FeatureImage.flat(grid)
    weights = compute_weight_field(features, weight_fn or WeightFunction())
    if proj is None:
        proj = ProjectedObservations.from_pixel_observations(
            rays, obs.pixels, obs.depths)
    mesh = triangulate(proj)
    bounds = observed_depth_bounds(obs.depths, bound_margin)
    init = init_depth(rays, proj, mesh, grid, bounds)
    cfg = ProblemConfig(w_data=w_data,
                        baseline_mode=(regularizer == "baseline"),
                        bounds=bounds)
    graph = assemble(rays, obs, weights, cfg, grid)
    solution, report = solve(graph, init, solver_cfg or SolverConfig())

    conf = None
    filtered = solution
    if variance_threshold is not None or compute_confidence:
        conf = estimate_variances(graph, solution)
        if variance_threshold is not None:
            filtered = filter_depths(solution, conf, variance_threshold)
    return UpsampleResult(depth=filtered, raw_depth=solution,
                          confidence=conf, report=report, graph=graph,
                          rays=rays)


class DepthUpsampler(BaseEstimator):
    """Dense depth regression from sparse pixel observations.

    Fits a Markov-random-field energy whose regularizer prefers locally
    planar surfaces (collinear neighboring 3D points along image rows and
    columns) and predicts a depth for every pixel of the grid.

    Parameters
    ----------
    camera : CameraModel or None
        Viewing-ray model.  ``None`` uses an orthographic camera with unit
        pixel pitch, which turns the regularizer into an affine-surface
        prior in (col, row, depth) space.
    grid_shape : (height, width) or None
        Required when ``fit`` is called without a guide image.
    weight_kind, weight_alpha, weight_tau :
        Scalar weighting function applied to the squared RGB difference of
        neighboring pixels, scaled by the semantic certainty.
    w_data : float
        Weight of the depth/normal data terms.
    regularizer : "planar" or "baseline"
        Collinearity regularizer or the constant-depth reference model.
    bound_margin : float
        Relative widening of the observed depth range used as box bounds.
    variance_threshold : float or None
        When set, per-pixel variances from the inverse Gauss-Newton
        Hessian are computed and estimates at or above the threshold are
        invalidated.

    Attributes
    ----------
    depth_map_ : (H, W) array of estimated depths
    valid_mask_ : (H, W) bool array (False where filtered out)
    variance_map_ : (H, W) array or None
    report_ : SolveReport of the underlying optimization
    n_iter_ : iterations used by the solver
    """

    def __init__(self, camera=None, grid_shape=None,
                 weight_kind="exponential", weight_alpha=DEFAULT_ALPHA,
                 weight_tau=0.0, w_data=1.0, regularizer="planar",
                 bound_margin=0.5, variance_threshold=None,
                 max_iterations=200, gradient_tolerance=1e-8,
                 step_tolerance=1e-10, cost_tolerance=1e-9):
        self.camera = camera
        self.grid_shape = grid_shape
        self.weight_kind = weight_kind
        self.weight_alpha = weight_alpha
        self.weight_tau = weight_tau
        self.w_data = w_data
        self.regularizer = regularizer
        self.bound_margin = bound_margin
        self.variance_threshold = variance_threshold
        self.max_iterations = max_iterations
        self.gradient_tolerance = gradient_tolerance
        self.step_tolerance = step_tolerance
        self.cost_tolerance = cost_tolerance

    def _grid(self, image):
        if image is not None:
            h, w = np.asarray(image).shape[:2]
        elif self.grid_shape is not None:
            h, w = self.grid_shape
        else:
            raise ValueError(
                "provide grid_shape or a guide image to define the grid")
        return ImageGrid(int(w), int(h))

    def fit(self, X, y, image=None, certainty=None, normals=None):
        """Estimate a dense depth map.

        Parameters
        ----------
        X : (n, 2) int array of observed (row, col) pixel coordinates
        y : (n,) positive observed depths (meters along the viewing ray)
        image : optional (H, W, 3) RGB guide in [0, 1]
        certainty : optional (H, W) semantic certainty in [0, 1]
        normals : optional (n, 3) unit surface normals in the camera frame
        """
        grid = self._grid(image)
        X = check_pixel_coords(X, grid)
        y = check_depth_values(y, len(X))
        camera = self.camera
        if camera is None:
            camera = CameraModel(kind=ORTHOGRAPHIC, fx=1.0, fy=1.0)
        features = None
        if image is not None:
            features = FeatureImage(grid, check_guide_image(image, grid),
                                    certainty)
        elif certainty is not None:
            features = FeatureImage(
                grid, np.full((grid.height, grid.width, 3), 0.5), certainty)
        weight_fn = WeightFunction(kind=self.weight_kind,
                                   alpha=self.weight_alpha,
                                   tau=self.weight_tau)
        solver_cfg = SolverConfig(
            max_iterations=self.max_iterations,
            gradient_tolerance=self.gradient_tolerance,
            step_tolerance=self.step_tolerance,
            cost_tolerance=self.cost_tolerance)
        pixels = X[:, 0] * grid.width + X[:, 1]
        result = upsample_field(
            camera, grid, pixels, y, normals=normals,
            features=features, weight_fn=weight_fn, w_data=self.w_data,
            regularizer=self.regularizer, bound_margin=self.bound_margin,
            solver_cfg=solver_cfg,
            variance_threshold=self.variance_threshold)

        self.grid_ = grid
        self.depth_map_ = result.depth.depths
        self.valid_mask_ = result.depth.valid
        self.variance_map_ = (None if result.confidence is None
                              else result.confidence.variances)
        self.report_ = result.report
        self.n_iter_ = result.report.iterations
        return self

    def predict(self, X):
        """Depths at (row, col) pixel coordinates; NaN where filtered."""
        if not hasattr(self, "depth_map_"):
            raise RuntimeError("estimator is not fitted")
        X = check_pixel_coords(X, self.grid_)
        out = self.depth_map_[X[:, 0], X[:, 1]].astype(float)
        out[~self.valid_mask_[X[:, 0], X[:, 1]]] = np.nan
        return out

    def score(self, X, y):
        """Negative mean absolute depth error over valid predictions."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        ok = np.isfinite(pred)
        if not ok.any():
            raise ValueError("no valid predictions to score")
        return -float(np.mean(np.abs(pred[ok] - y[ok])))
