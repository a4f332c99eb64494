"""Command line entry points: upsample, benchmark, filter.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numerical
failure.  Failures print a single machine-parsable line to stderr of the
form ``error: <category>: <message>``.

The environment variable ``PLANARDEPTH_THREADS`` caps the thread count of
the numerical backends; it must be honored before numpy loads, so heavy
imports happen inside the command handlers.
"""

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


def _apply_thread_cap():
    cap = os.environ.get("PLANARDEPTH_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _fail(category, message):
    sys.stderr.write(f"error: {category}: {message}\n")


def _classify(exc):
    from .errors import ConfigurationError, EvaluationError, NumericalError
    if isinstance(exc, (ConfigurationError, ValueError)):
        return "config", EXIT_CONFIG
    if isinstance(exc, OSError):
        return "io", EXIT_IO
    if isinstance(exc, (NumericalError, EvaluationError)):
        return "numeric", EXIT_NUMERIC
    return "internal", EXIT_NUMERIC


def cmd_upsample(config_path):
    import numpy as np

    from .config import (NORMALS_ESTIMATE, NORMALS_INPUT, load_run_config)
    from .errors import ConfigurationError
    from .features import FeatureImage, depth_map_normals, estimate_normals
    from .geometry import ImageGrid, build_ray_field
    from .io import (depth_field_to_pfm, pfm_to_sparse_observations,
                     read_gray_image, read_ply, read_rgb_image, write_pfm,
                     write_ply)
    from .upsampler import observations_from_cloud, upsample_field

    cfg = load_run_config(config_path)
    base = os.path.dirname(os.path.abspath(config_path))

    rgb = read_rgb_image(cfg.input_path("image", base))
    grid = ImageGrid(rgb.shape[1], rgb.shape[0])
    certainty = None
    if cfg.inputs.get("certainty"):
        certainty = read_gray_image(cfg.input_path("certainty", base))
        if certainty.shape != grid.shape:
            raise ConfigurationError(
                "certainty raster does not match the guide image size")
    features = FeatureImage(grid, rgb, certainty)
    camera = cfg.build_camera()

    proj = None
    normals = None
    if cfg.inputs.get("sparse_depth"):
        shape, pixels, depths = pfm_to_sparse_observations(
            cfg.input_path("sparse_depth", base))
        if shape != grid.shape:
            raise ConfigurationError(
                "sparse depth raster does not match the guide image size")
        if cfg.normals == NORMALS_INPUT:
            raise ConfigurationError(
                "normals: input requires a cloud input")
        points_cam = None
    else:
        cloud = read_ply(cfg.input_path("cloud", base))
        cloud_normals = cloud.get("normals") \
            if cfg.normals == NORMALS_INPUT else None
        if cfg.normals == NORMALS_INPUT and cloud_normals is None:
            raise ConfigurationError(
                "normals: input requested but the cloud has no normals")
        proj, pixels, normals = observations_from_cloud(
            camera, grid, cloud["points"], cloud_normals)
        if len(proj) == 0:
            raise ConfigurationError("no cloud point projects into view")
        depths = proj.depths
        points_cam = proj.points

    normal_valid = None
    if cfg.normals == NORMALS_ESTIMATE:
        if points_cam is None:
            rays_tmp = build_ray_field(camera, grid)
            ori = rays_tmp.flat_origins()[pixels]
            dirs = rays_tmp.flat_directions()[pixels]
            points_cam = ori + depths[:, None] * dirs
        nset = estimate_normals(points_cam, cfg.normal_radius, np.zeros(3))
        normals, normal_valid = nset.normals, nset.valid

    result = upsample_field(
        camera, grid, pixels, depths, normals=normals,
        normal_valid=normal_valid, features=features,
        weight_fn=cfg.build_weight_function(), w_data=cfg.w_data,
        regularizer=cfg.regularizer, bound_margin=cfg.bound_margin,
        solver_cfg=cfg.build_solver_config(),
        variance_threshold=cfg.variance_threshold,
        compute_confidence=bool(cfg.outputs.get("variance")
                                or cfg.outputs.get("cloud")),
        proj=proj)

    depth_field_to_pfm(cfg.output_path("depth", base), result.depth)

    if cfg.outputs.get("variance"):
        var = np.where(result.confidence.available,
                       result.confidence.variances, np.nan)
        write_pfm(cfg.output_path("variance", base), var)

    if cfg.outputs.get("cloud"):
        field = result.depth
        mask = field.valid
        pts = (result.rays.origins
               + field.depths[:, :, None] * result.rays.directions)
        nrm = depth_map_normals(result.rays, field.depths)
        variances = (result.confidence.variances if result.confidence
                     is not None else np.full(grid.shape, np.nan))
        write_ply(cfg.output_path("cloud", base),
                  pts[mask], normals=nrm[mask], colors=rgb[mask],
                  variances=variances[mask])

    filtered_px = int((~result.depth.valid).sum())
    summary = {
        "initial_cost": result.report.initial_cost,
        "final_cost": result.report.final_cost,
        "iterations": result.report.iterations,
        "termination": result.report.termination,
        "filtered_px": filtered_px,
        "observations": int(len(depths)),
        "seed": cfg.seed,
    }
    with open(cfg.output_path("summary", base), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return EXIT_OK


def cmd_benchmark(config_path):
    from .bench import compare_methods, generate_scene, results_to_csv
    from .config import BenchmarkConfig, load_benchmark_config
    from .features import WeightFunction
    from .solver import SolverConfig

    cfg = load_benchmark_config(config_path)
    base = os.path.dirname(os.path.abspath(config_path))
    weight_fn = WeightFunction(
        kind=cfg.weights.get("kind", "exponential"),
        alpha=cfg.weights.get("alpha", WeightFunction().alpha),
        tau=cfg.weights.get("tau", 0.0))
    solver_cfg = SolverConfig(**cfg.solver)

    rows = []
    for scene_data in cfg.scenes:
        spec = BenchmarkConfig.build_scene_spec(scene_data)
        scene = generate_scene(spec)
        rows.extend(compare_methods(
            scene, cfg.ratios, cfg.modes, cfg.seeds, weight_fn=weight_fn,
            w_data=cfg.w_data, solver_cfg=solver_cfg,
            bound_margin=cfg.bound_margin))

    out = os.path.join(base, cfg.output)
    with open(out, "w") as f:
        f.write(results_to_csv(rows))
    failures = [r for r in rows if r["error"]]
    if failures:
        _fail("numeric",
              f"{len(failures)} of {len(rows)} benchmark cells failed"
              f" (see {out})")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_filter(depth_path, var_path, threshold, out_path):
    import numpy as np

    from .errors import ConfigurationError
    from .io import read_pfm, write_pfm

    depth = read_pfm(depth_path)
    var = read_pfm(var_path)
    if depth.shape != var.shape:
        raise ConfigurationError(
            f"depth {depth.shape} and variance {var.shape} rasters "
            "have different dimensions")
    keep = np.isfinite(depth) & np.isfinite(var) & (var < threshold)
    out = np.where(keep, depth, np.nan)
    write_pfm(out_path, out)
    kept = int(keep.sum())
    total = depth.size
    print(f"kept={kept} filtered={total - kept}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="planardepth",
        description="Guided depth upsampling with a planarity-preserving "
                    "regularizer")
    sub = parser.add_subparsers(dest="command", required=True)

    p_up = sub.add_parser("upsample", help="run the upsampling pipeline")
    p_up.add_argument("--config", required=True, help="YAML run config")

    p_bench = sub.add_parser("benchmark",
                             help="planar-vs-baseline synthetic sweep")
    p_bench.add_argument("--config", required=True,
                         help="YAML benchmark config")

    p_filter = sub.add_parser("filter",
                              help="drop depths with high variance")
    p_filter.add_argument("--depth", required=True, help="depth PFM")
    p_filter.add_argument("--var", required=True, help="variance PFM")
    p_filter.add_argument("--threshold", required=True, type=float)
    p_filter.add_argument("--out", required=True, help="output depth PFM")
    return parser


def main(argv=None):
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "upsample":
            return cmd_upsample(args.config)
        if args.command == "benchmark":
            return cmd_benchmark(args.config)
        return cmd_filter(args.depth, args.var, args.threshold, args.out)
    except Exception as exc:
        category, code = _classify(exc)
        _fail(category, str(exc).replace("\n", " "))
        return code


if __name__ == "__main__":
    sys.exit(main())
