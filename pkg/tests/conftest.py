import pytest

from planardepth.bench import (RANDOM, RegionSpec, SceneSpec, downsample,
                               generate_scene)
from planardepth.features import WeightFunction, compute_weight_field
from planardepth.geometry import (ORTHOGRAPHIC, PINHOLE, CameraModel,
                                  ImageGrid)
from planardepth.prior import (ProjectedObservations, init_depth,
                               observed_depth_bounds, triangulate)
from planardepth.problem import ProblemConfig, assemble


@pytest.fixture
def grid3():
    return ImageGrid(3, 3)


@pytest.fixture
def ortho_cam():
    return CameraModel(kind=ORTHOGRAPHIC, fx=1.0, fy=1.0)


@pytest.fixture
def pinhole_cam():
    return CameraModel(kind=PINHOLE, fx=10.0, fy=10.0, cx=3.5, cy=3.5)


def make_scene(width=8, height=8, fx=10.0, slant=(0.2, -0.1),
               center_depth=4.0, noise=0.0, two_region=False,
               with_normals=True, name="scene", kind=PINHOLE):
    cam = CameraModel(kind=kind, fx=fx, fy=fx,
                      cx=(width - 1) / 2, cy=(height - 1) / 2)
    regions = [RegionSpec(normal=(slant[0], slant[1], 1.0),
                          center_depth=center_depth, rgb=(0.6, 0.3, 0.2))]
    if two_region:
        regions.append(RegionSpec(normal=(-slant[1], slant[0], 1.0),
                                  center_depth=center_depth * 0.8,
                                  rgb=(0.2, 0.5, 0.8),
                                  rect=(0, width // 2, height, width)))
    spec = SceneSpec(name=name, width=width, height=height, camera=cam,
                     regions=regions, sigma_noise=noise,
                     with_normals=with_normals)
    return generate_scene(spec)


def random_problem(rng, width=8, height=8, ratio=0.25, noise=0.01,
                   two_region=False, baseline=False):
    """Random well-conditioned problem instance plus its mesh init."""
    scene = make_scene(width=width, height=height,
                       slant=(rng.uniform(-0.25, 0.25),
                              rng.uniform(-0.25, 0.25)),
                       center_depth=rng.uniform(3.0, 6.0), noise=noise,
                       two_region=two_region)
    obs = downsample(scene, ratio, RANDOM, seed=int(rng.integers(0, 10000)))
    weights = compute_weight_field(scene.features, WeightFunction())
    bounds = observed_depth_bounds(obs.depths, 0.5)
    cfg = ProblemConfig(bounds=bounds, baseline_mode=baseline)
    graph = assemble(scene.rays, obs, weights, cfg, scene.grid)
    proj = ProjectedObservations.from_pixel_observations(
        scene.rays, obs.pixels, obs.depths)
    init = init_depth(scene.rays, proj, triangulate(proj), scene.grid,
                      bounds)
    return scene, obs, graph, init
