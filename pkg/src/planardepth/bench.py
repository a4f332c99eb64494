"""Synthetic piecewise-planar scenes and the evaluation harness.

Scenes are exact by construction: every pixel's ground-truth depth is the
analytic intersection of its viewing ray with its region's plane, which
makes exact recovery a testable property.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EvaluationError
from .features import FeatureImage, WeightFunction, compute_weight_field
from .geometry import DepthField, ImageGrid, build_ray_field, ray_through
from .prior import (ProjectedObservations, init_depth, observed_depth_bounds,
                    triangulate)
from .problem import ObservationSet, ProblemConfig, assemble
from .solver import SolverConfig, solve

PLANAR = "planar"
BASE = "baseline"
EQUIDISTANT = "equidistant"
RANDOM = "random"

DEFAULT_BOUND_MARGIN = 0.5

RESULT_COLUMNS = ("scene", "method", "mode", "ratio_requested",
                  "ratio_achieved", "seed", "mae_m", "medae_m",
                  "filtered_px", "runtime_s", "error")


@dataclass
class RegionSpec:
    """One planar region of a synthetic scene.

    ``rect`` is (row0, col0, row1, col1), half-open; ``None`` covers the
    whole frame.  Later regions override earlier ones.  The plane is given
    by its normal plus either an explicit offset (n . x = offset) or the
    depth at the region's center pixel.
    """

    normal: tuple
    rgb: tuple = (0.5, 0.5, 0.5)
    center_depth: float = None
    offset: float = None
    rect: tuple = None


@dataclass
class SceneSpec:
    name: str = "scene"
    width: int = 64
    height: int = 64
    camera: object = None
    regions: list = field(default_factory=list)
    sigma_noise: float = 0.0
    normal_sigma_deg: float = 0.0
    with_normals: bool = True


@dataclass
class SyntheticScene:
    name: str
    grid: ImageGrid
    camera: object
    rays: object
    plane_normals: np.ndarray   # (k, 3) unit, oriented toward the camera
    plane_offsets: np.ndarray   # (k,)
    labels: np.ndarray          # (H, W) region index per pixel
    ground_truth: DepthField
    features: FeatureImage
    sigma_noise: float
    normal_sigma_deg: float
    with_normals: bool


@dataclass
class EvalResult:
    mae: float
    medae: float
    ratio: float = np.nan
    error_image: np.ndarray = None
    runtime: float = 0.0
    excluded_px: int = 0


def _region_plane(spec, camera, labels, region_idx):
    n = np.asarray(spec.normal, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ConfigurationError("region normal must be nonzero")
    n = n / norm
    if spec.offset is not None:
        return n, float(spec.offset)
    if spec.center_depth is None:
        raise ConfigurationError(
            "region needs either an offset or a center depth")
    rows, cols = np.nonzero(labels == region_idx)
    if rows.size == 0:
        raise ConfigurationError("region covers no pixels")
    u = float(cols.mean())
    v = float(rows.mean())
    ori, direc = ray_through(camera, u, v)
    offset = float(n @ (ori + spec.center_depth * direc))
    return n, offset


def generate_scene(spec, seed=0):
    """Build a SyntheticScene with exact analytic ground truth."""
    grid = ImageGrid(spec.width, spec.height)
    camera = spec.camera
    if camera is None:
        raise ConfigurationError("scene needs a camera")
    if not spec.regions:
        raise ConfigurationError("scene needs at least one region")
    rays = build_ray_field(camera, grid)

    labels = np.full(grid.shape, -1, dtype=int)
    for idx, region in enumerate(spec.regions):
        if region.rect is None:
            labels[:, :] = idx
        else:
            r0, c0, r1, c1 = region.rect
            labels[r0:r1, c0:c1] = idx
    if np.any(labels < 0):
        raise ConfigurationError("regions do not cover every pixel")

    normals = np.zeros((len(spec.regions), 3))
    offsets = np.zeros(len(spec.regions))
    depths = np.zeros(grid.shape)
    rgb = np.zeros((grid.height, grid.width, 3))
    for idx, region in enumerate(spec.regions):
        mask = labels == idx
        if not mask.any():
            continue
        n, c = _region_plane(region, camera, labels, idx)
        denom = rays.directions[mask] @ n
        if np.any(np.abs(denom) < 1e-12):
            raise ConfigurationError(
                f"region {idx}: plane parallel to a viewing ray")
        d = (c - rays.origins[mask] @ n) / denom
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise ConfigurationError(
                f"region {idx}: plane is behind the camera or through its "
                "center for some pixels")
        # Orient the stored normal toward the ray origins.
        pts = rays.origins[mask] + d[:, None] * rays.directions[mask]
        if np.mean((rays.origins[mask] - pts) @ n) < 0:
            n, c = -n, -c
        normals[idx] = n
        offsets[idx] = c
        depths[mask] = d
        rgb[mask] = np.asarray(region.rgb, dtype=float)

    certainty = np.ones(grid.shape)
    if len(spec.regions) > 1:
        boundary = np.zeros(grid.shape, dtype=bool)
        boundary[:-1, :] |= labels[:-1, :] != labels[1:, :]
        boundary[1:, :] |= labels[1:, :] != labels[:-1, :]
        boundary[:, :-1] |= labels[:, :-1] != labels[:, 1:]
        boundary[:, 1:] |= labels[:, 1:] != labels[:, :-1]
        certainty[boundary] = 0.0

    truth = DepthField(grid, depths, np.ones(grid.shape, dtype=bool))
    truth.check()
    features = FeatureImage(grid, rgb, certainty)
    return SyntheticScene(
        name=spec.name, grid=grid, camera=camera, rays=rays,
        plane_normals=normals, plane_offsets=offsets, labels=labels,
        ground_truth=truth, features=features,
        sigma_noise=spec.sigma_noise,
        normal_sigma_deg=spec.normal_sigma_deg,
        with_normals=spec.with_normals, )


def _perturb_normals(rng, normals, sigma_rad):
    """Rotate each unit normal by a random small angle about a random axis."""
    out = normals.copy()
    for i in range(len(out)):
        n = out[i]
        axis = rng.standard_normal(3)
        axis -= (axis @ n) * n
        a = np.linalg.norm(axis)
        if a == 0:
            continue
        axis /= a
        ang = rng.normal(0.0, sigma_rad)
        out[i] = n * np.cos(ang) + np.cross(axis, n) * np.sin(ang)
        out[i] /= np.linalg.norm(out[i])
    return out


def downsample(scene, ratio, mode, seed=0):
    """Sparse observation set at the requested downsampling ratio.

    Equidistant mode keeps a regular sub-grid with stride round(1/sqrt(r));
    random mode keeps a seeded uniform sample without replacement (a
    permutation prefix, so larger ratios contain smaller ones).  The
    achieved ratio is len(obs) / num_pixels, reported exactly by callers.
    """
    if not 0 < ratio <= 1:
        raise ConfigurationError("downsampling ratio must be in (0, 1]")
    grid = scene.grid
    n = grid.num_pixels
    rng = np.random.default_rng(seed)
    if mode == EQUIDISTANT:
        stride = max(1, int(round(1.0 / np.sqrt(ratio))))
        rows = np.arange(0, grid.height, stride)
        cols = np.arange(0, grid.width, stride)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        pixels = (rr * grid.width + cc).reshape(-1)
    elif mode == RANDOM:
        m = int(np.floor(ratio * n))
        pixels = np.sort(rng.permutation(n)[:m])
    else:
        raise ConfigurationError(f"unknown downsampling mode {mode!r}")
    if len(pixels) < 3:
        raise ConfigurationError(
            f"ratio {ratio} keeps only {len(pixels)} observations; "
            "need at least 3")

    depths = scene.ground_truth.depths.reshape(-1)[pixels].copy()
    if scene.sigma_noise > 0:
        depths = np.maximum(depths + rng.normal(0, scene.sigma_noise,
                                                size=depths.shape), 1e-6)

    normals = None
    valid = None
    if scene.with_normals:
        lab = scene.labels.reshape(-1)[pixels]
        normals = scene.plane_normals[lab]
        if scene.normal_sigma_deg > 0:
            normals = _perturb_normals(
                rng, normals, np.deg2rad(scene.normal_sigma_deg))
        valid = np.ones(len(pixels), dtype=bool)
    return ObservationSet.build(scene.rays, pixels, depths, normals, valid)


def evaluate(estimate, truth):
    """Mean/median absolute depth error over the estimate's valid pixels.

    The median of an even count is the lower-middle order statistic.
    Invalid pixels are excluded and counted, never imputed.
    """
    if estimate.grid.shape != truth.grid.shape:
        raise EvaluationError("estimate and truth grids disagree")
    mask = estimate.valid & truth.valid
    excluded = int(estimate.grid.num_pixels - mask.sum())
    if not mask.any():
        raise EvaluationError("no valid pixels to evaluate")
    err = np.abs(estimate.depths - truth.depths)
    vals = np.sort(err[mask])
    mae = float(vals.mean())
    medae = float(vals[(len(vals) - 1) // 2])
    err_img = np.where(mask, err, np.nan)
    return EvalResult(mae=mae, medae=medae, error_image=err_img,
                      excluded_px=excluded)


def run_cell(scene, obs, method, weight_fn=None, w_data=1.0,
             solver_cfg=None, bound_margin=DEFAULT_BOUND_MARGIN):
    """One pipeline run: prior, assembly, solve, evaluation."""
    weight_fn = weight_fn or WeightFunction()
    weights = compute_weight_field(scene.features, weight_fn)
    proj = ProjectedObservations.from_pixel_observations(
        scene.rays, obs.pixels, obs.depths)
    mesh = triangulate(proj)
    bounds = observed_depth_bounds(obs.depths, bound_margin)
    init = init_depth(scene.rays, proj, mesh, scene.grid, bounds)
    cfg = ProblemConfig(w_data=w_data, baseline_mode=(method == BASE),
                        bounds=bounds)
    graph = assemble(scene.rays, obs, weights, cfg, scene.grid)
    estimate, report = solve(graph, init, solver_cfg or SolverConfig())
    result = evaluate(estimate, scene.ground_truth)
    return estimate, report, result


def compare_methods(scene, ratios, modes, seeds, weight_fn=None,
                    w_data=1.0, solver_cfg=None,
                    bound_margin=DEFAULT_BOUND_MARGIN):
    """Planar-vs-baseline sweep over ratios, modes and seeds.

    Both methods see the identical observation set per cell.  Failures are
    recorded in the row's ``error`` field without aborting the sweep.
    """
    if not ratios or not modes or not seeds:
        raise ConfigurationError("ratios, modes and seeds must be non-empty")
    rows = []
    n = scene.grid.num_pixels
    for ratio in ratios:
        for mode in modes:
            for seed in seeds:
                try:
                    obs = downsample(scene, ratio, mode, seed)
                    achieved = len(obs) / n
                except Exception as exc:  # recorded per cell
                    obs = None
                    achieved = np.nan
                    fail = f"{type(exc).__name__}: {exc}"
                for method in (PLANAR, BASE):
                    row = {"scene": scene.name, "method": method,
                           "mode": mode, "ratio_requested": ratio,
                           "ratio_achieved": achieved, "seed": seed,
                           "mae_m": np.nan, "medae_m": np.nan,
                           "filtered_px": 0, "runtime_s": 0.0, "error": ""}
                    if obs is None:
                        row["error"] = fail
                        rows.append(row)
                        continue
                    t0 = time.perf_counter()
                    try:
                        _, _, result = run_cell(
                            scene, obs, method, weight_fn=weight_fn,
                            w_data=w_data, solver_cfg=solver_cfg,
                            bound_margin=bound_margin)
                        row["mae_m"] = result.mae
                        row["medae_m"] = result.medae
                        row["filtered_px"] = result.excluded_px
                    except Exception as exc:
                        row["error"] = f"{type(exc).__name__}: {exc}"
                    row["runtime_s"] = time.perf_counter() - t0
                    rows.append(row)
    return rows


def results_to_csv(rows):
    """Render sweep rows as CSV text with the canonical column order."""
    lines = [",".join(RESULT_COLUMNS)]
    for row in rows:
        cells = []
        for col in RESULT_COLUMNS:
            v = row.get(col, "")
            if isinstance(v, float):
                cells.append(repr(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
