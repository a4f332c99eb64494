import numpy as np
import pytest

from planardepth.errors import ConfigurationError
from planardepth.features import (FeatureImage, WeightFunction,
                                  compute_weight_field,
                                  constant_weight_field)
from planardepth.geometry import (ORTHOGRAPHIC, PINHOLE, CameraModel,
                                  ImageGrid, build_ray_field, neighbors4)
from planardepth.problem import (COLLINEAR, DEPTH, NORMAL,
                                 GraphBuilder, ObservationSet,
                                 ProblemConfig, assemble, baseline_residual,
                                 collinearity_jacobian,
                                 collinearity_residual, depth_residual,
                                 normal_residual, normal_residual_jacobian)
from reference import finite_difference_jacobian, hand_summed_energy


@pytest.fixture
def ortho_rays():
    cam = CameraModel(kind=ORTHOGRAPHIC, fx=1.0, fy=1.0)
    grid = ImageGrid(5, 5)
    return build_ray_field(cam, grid)


class TestObservationSet:
    def test_duplicate_pixels_keep_smallest_depth(self, ortho_rays):
        obs = ObservationSet.build(ortho_rays, [3, 3, 7], [5.0, 2.0, 1.0])
        assert list(obs.pixels) == [3, 7]
        assert list(obs.depths) == [2.0, 1.0]

    def test_plane_offset_anchored_at_observation(self, ortho_rays):
        n = np.array([0.0, 0.6, 0.8])
        obs = ObservationSet.build(ortho_rays, [12], [3.0], [n])
        p = ortho_rays.flat_origins()[12] + 3.0 * \
            ortho_rays.flat_directions()[12]
        assert obs.plane_offsets[0] == pytest.approx(float(n @ p))

    def test_bad_depths_rejected(self, ortho_rays):
        with pytest.raises(ValueError):
            ObservationSet.build(ortho_rays, [1], [-2.0])
        with pytest.raises(ValueError):
            ObservationSet.build(ortho_rays, [1], [np.inf])

    def test_empty_rejected(self, ortho_rays):
        with pytest.raises(ConfigurationError):
            ObservationSet.build(ortho_rays, [], [])

    def test_non_unit_normal_rejected(self, ortho_rays):
        with pytest.raises(ValueError):
            ObservationSet.build(ortho_rays, [1], [2.0], [[0.0, 0.0, 2.0]])


class TestDepthResidual:
    def test_exact_match(self):
        assert depth_residual(4.5, 4.5) == 0.0

    def test_subtraction(self):
        assert depth_residual(5.0, 4.5) == pytest.approx(0.5)

    def test_jacobian_matches_finite_difference(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            d = rng.uniform(0.5, 10)
            obs = rng.uniform(0.5, 10)
            fd = finite_difference_jacobian(
                lambda x: depth_residual(x[0], obs), np.array([d]))
            assert abs(fd[0, 0] - 1.0) < 1e-9


class TestNormalResidual:
    def test_point_on_plane(self, ortho_rays):
        # ortho pixel (row 4, col 3) at depth 2 gives the point (3, 4, 2)
        pix = ortho_rays.grid.index(4, 3)
        assert normal_residual(ortho_rays, [0, 0, 1], 2.0, pix, 2.0) == 0.0

    def test_unit_offset(self, ortho_rays):
        pix = ortho_rays.grid.index(0, 0)
        r = normal_residual(ortho_rays, [0, 0, 1], 2.0, pix, 3.0)
        assert r == pytest.approx(1.0)

    def test_jacobian_matches_finite_difference(self):
        rng = np.random.default_rng(21)
        cam = CameraModel(kind=PINHOLE, fx=3.0, fy=4.0, cx=2.0, cy=2.0)
        grid = ImageGrid(5, 5)
        rays = build_ray_field(cam, grid)
        for _ in range(30):
            pix = int(rng.integers(0, grid.num_pixels))
            n = rng.standard_normal(3)
            n /= np.linalg.norm(n)
            d_plane = rng.uniform(-3, 3)
            d = rng.uniform(0.5, 8)
            analytic = normal_residual_jacobian(rays, n, pix)
            fd = finite_difference_jacobian(
                lambda x: normal_residual(rays, n, d_plane, pix, x[0]),
                np.array([d]))
            assert abs(analytic - fd[0, 0]) < 1e-6


class TestCollinearityResidual:
    def test_equally_spaced_collinear(self):
        r = collinearity_residual([0, 0, 0], [1, 0, 0], [2, 0, 0])
        assert np.allclose(r, 0.0)

    def test_unequal_spacing_still_collinear(self):
        r = collinearity_residual([0, 0, 0], [1, 0, 0], [3, 0, 0])
        assert np.allclose(r, 0.0)

    def test_right_angle(self):
        r = collinearity_residual([0, 0, 0], [1, 0, 0], [1, 1, 0])
        assert np.allclose(r, [1.0, -1.0, 0.0])
        assert np.linalg.norm(r) == pytest.approx(np.sqrt(2))

    def test_zero_for_random_collinear_triples(self):
        rng = np.random.default_rng(22)
        for _ in range(30):
            p = rng.standard_normal(3)
            v = rng.standard_normal(3)
            a, b = np.sort(rng.uniform(0.1, 3.0, 2))
            r = collinearity_residual(p, p + a * v, p + (a + b) * v)
            assert np.max(np.abs(r)) < 1e-12

    def test_scale_invariance_about_common_origin(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            pts = rng.standard_normal((3, 3)) * 2
            s = rng.uniform(0.2, 5.0)
            r1 = collinearity_residual(*pts)
            r2 = collinearity_residual(*(s * pts))
            assert np.allclose(r1, r2, atol=1e-12)

    def test_degenerate_segment_deactivates(self):
        r = collinearity_residual([1, 2, 3], [1, 2, 3], [4, 5, 6])
        assert np.all(r == 0.0)
        jac = collinearity_jacobian([1, 2, 3], [1, 2, 3], [4, 5, 6],
                                    [0, 0, 1], [0, 0, 1], [0, 0, 1])
        assert np.all(jac == 0.0)

    def test_jacobian_matches_finite_difference(self):
        rng = np.random.default_rng(24)
        cam = CameraModel(kind=PINHOLE, fx=4.0, fy=5.0, cx=2.0, cy=2.0)
        grid = ImageGrid(5, 5)
        rays = build_ray_field(cam, grid)
        ori = rays.flat_origins()
        dirs = rays.flat_directions()
        for _ in range(30):
            j, i, k = rng.choice(grid.num_pixels, size=3, replace=False)
            dirs_jik = (dirs[j], dirs[i], dirs[k])

            def res(depths):
                p_j = ori[j] + depths[0] * dirs[j]
                p_i = ori[i] + depths[1] * dirs[i]
                p_k = ori[k] + depths[2] * dirs[k]
                return collinearity_residual(p_j, p_i, p_k)

            d = rng.uniform(1.0, 8.0, 3)
            p_j, p_i, p_k = (ori[j] + d[0] * dirs[j],
                             ori[i] + d[1] * dirs[i],
                             ori[k] + d[2] * dirs[k])
            analytic = collinearity_jacobian(p_j, p_i, p_k, *dirs_jik)
            fd = finite_difference_jacobian(res, d)
            denom = max(1.0, np.abs(fd).max())
            assert np.abs(analytic - fd).max() / denom < 1e-5


class TestBaselineResidual:
    def test_zero(self):
        assert baseline_residual(3.0, 3.0) == 0.0

    def test_unit(self):
        assert baseline_residual(3.0, 2.0) == 1.0

    def test_antisymmetry(self):
        rng = np.random.default_rng(25)
        for _ in range(20):
            a, b = rng.uniform(0.1, 9, 2)
            assert baseline_residual(a, b) == -baseline_residual(b, a)


def _flat_weights(grid):
    return constant_weight_field(grid, 1.0)


class TestAssemble:
    def test_block_count_single_interior_observation(self):
        cam = CameraModel(kind=ORTHOGRAPHIC, fx=1.0, fy=1.0)
        grid = ImageGrid(3, 3)
        rays = build_ray_field(cam, grid)
        obs = ObservationSet.build(rays, [grid.index(1, 1)], [4.0])
        cfg = ProblemConfig(bounds=(0.1, 10.0))
        graph = assemble(rays, obs, _flat_weights(grid), cfg, grid)
        # 1 depth block + 6 collinearity blocks on a 3x3 grid
        assert graph.num_blocks == 7
        kinds = [graph.describe_block(b)[0] for b in range(7)]
        assert kinds.count(DEPTH) == 1 and kinds.count(COLLINEAR) == 6

    def test_block_count_formula(self):
        rng = np.random.default_rng(26)
        for w, h in ((4, 4), (6, 5)):
            cam = CameraModel(kind=ORTHOGRAPHIC, fx=1.0, fy=1.0)
            grid = ImageGrid(w, h)
            rays = build_ray_field(cam, grid)
            m = int(rng.integers(1, grid.num_pixels // 2))
            pix = rng.choice(grid.num_pixels, size=m, replace=False)
            obs = ObservationSet.build(rays, pix,
                                       rng.uniform(1, 5, size=m))
            cfg = ProblemConfig(bounds=(0.1, 10.0))
            graph = assemble(rays, obs, _flat_weights(grid), cfg, grid)
            expected = len(obs) + (w - 2) * h + w * (h - 2)
            assert graph.num_blocks == expected

    def test_normal_blocks_one_per_neighbor(self):
        cam = CameraModel(kind=ORTHOGRAPHIC, fx=1.0, fy=1.0)
        grid = ImageGrid(3, 3)
        rays = build_ray_field(cam, grid)
        obs = ObservationSet.build(rays, [grid.index(1, 1)], [4.0],
                                   [[0.0, 0.0, 1.0]])
        cfg = ProblemConfig(bounds=(0.1, 10.0))
        graph = assemble(rays, obs, _flat_weights(grid), cfg, grid)
        kinds = [graph.describe_block(b)[0]
                 for b in range(graph.num_blocks)]
        assert kinds.count(NORMAL) == 4

    def test_energy_matches_hand_summation(self):
        rng = np.random.default_rng(27)
        cam = CameraModel(kind=PINHOLE, fx=6.0, fy=6.0, cx=1.5, cy=1.5)
        grid = ImageGrid(4, 4)
        rays = build_ray_field(cam, grid)
        feats = FeatureImage(grid, rng.uniform(0, 1, (4, 4, 3)),
                             rng.uniform(0, 1, (4, 4)))
        weight_fn = WeightFunction(alpha=3.0)
        pix = np.array([0, 5, 10, 15])
        depths_obs = rng.uniform(2, 5, 4)
        normals = rng.standard_normal((4, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        valid = np.array([True, False, True, True])
        obs = ObservationSet.build(rays, pix, depths_obs, normals, valid)
        for baseline in (False, True):
            cfg = ProblemConfig(w_data=2.5, baseline_mode=baseline,
                                bounds=(0.1, 20.0))
            weights = compute_weight_field(feats, weight_fn)
            graph = assemble(rays, obs, weights, cfg, grid)
            state = rng.uniform(1.5, 6.0, grid.num_pixels)
            expected = hand_summed_energy(rays, obs, feats, weight_fn,
                                          cfg, grid, state)
            assert graph.cost(state) == pytest.approx(expected, abs=1e-10)

    def test_baseline_recovers_reference_regularizer(self):
        # constant weights + baseline mode = w * sum_i sum_n (d_i - d_n)^2
        cam = CameraModel(kind=PINHOLE, fx=5.0, fy=5.0, cx=2.0, cy=2.0)
        grid = ImageGrid(5, 4)
        rays = build_ray_field(cam, grid)
        w = 0.7
        rng = np.random.default_rng(28)
        obs = ObservationSet.build(rays, [7], [3.0])
        cfg = ProblemConfig(w_data=1.0, baseline_mode=True,
                            bounds=(0.1, 20.0))
        weights = constant_weight_field(grid, w)
        graph = assemble(rays, obs, weights, cfg, grid)
        state = rng.uniform(1, 6, grid.num_pixels)
        expected = (state[7] - 3.0) ** 2
        for i in range(grid.num_pixels):
            for n in neighbors4(grid, i):
                expected += w * (state[i] - state[n]) ** 2
        assert graph.cost(state) == pytest.approx(expected, rel=1e-12)

    def test_single_plane_zero_energy(self):
        cam = CameraModel(kind=PINHOLE, fx=8.0, fy=8.0, cx=2.5, cy=2.5)
        grid = ImageGrid(6, 6)
        rays = build_ray_field(cam, grid)
        n = np.array([0.15, -0.1, 1.0])
        n /= np.linalg.norm(n)
        offset = 3.0 * n[2]  # plane through (0, 0, 3)
        # orient toward the camera origin: n.(0 - p) >= 0 needs offset <= 0
        n, offset = -n, -offset
        dirs = rays.flat_directions()
        depths = (offset - rays.flat_origins() @ n) / (dirs @ n)
        assert np.all(depths > 0)
        pix = np.array([0, 7, 14, 21, 28, 35])
        obs = ObservationSet.build(rays, pix, depths[pix],
                                   np.tile(n, (6, 1)))
        cfg = ProblemConfig(bounds=(0.1, 20.0))
        graph = assemble(rays, obs, _flat_weights(grid), cfg, grid)
        assert graph.cost(depths) < 1e-12

    def test_empty_observations_rejected(self, ortho_rays):
        grid = ortho_rays.grid
        cfg = ProblemConfig(bounds=(0.1, 10.0))
        with pytest.raises(ConfigurationError):
            ObservationSet.build(ortho_rays, [], [])

    def test_weights_enter_as_square_roots(self):
        cam = CameraModel(kind=ORTHOGRAPHIC, fx=1.0, fy=1.0)
        grid = ImageGrid(3, 3)
        rays = build_ray_field(cam, grid)
        b = GraphBuilder(grid, rays)
        b.add_depth(4, 2.0, weight=9.0)
        graph = b.build(bounds=(0.1, 10.0))
        state = np.full(grid.num_pixels, 3.0)
        assert graph.cost(state) == pytest.approx(9.0 * 1.0)


class TestGraphEvaluation:
    def test_jacobian_matches_finite_difference_full_graph(self):
        rng = np.random.default_rng(29)
        cam = CameraModel(kind=PINHOLE, fx=6.0, fy=7.0, cx=2.0, cy=2.0)
        grid = ImageGrid(5, 5)
        rays = build_ray_field(cam, grid)
        pix = np.array([0, 6, 12, 18, 24])
        normals = rng.standard_normal((5, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        obs = ObservationSet.build(rays, pix, rng.uniform(2, 5, 5), normals)
        cfg = ProblemConfig(w_data=1.7, bounds=(0.1, 20.0))
        graph = assemble(rays, obs, _flat_weights(grid), cfg, grid)
        state = rng.uniform(1.5, 6.0, grid.num_pixels)
        _, jac = graph.residuals_and_jacobian(state)
        fd = finite_difference_jacobian(graph.residuals, state)
        denom = max(1.0, np.abs(fd).max())
        assert np.abs(jac.toarray() - fd).max() / denom < 1e-6

    def test_block_row_mapping(self):
        cam = CameraModel(kind=ORTHOGRAPHIC, fx=1.0, fy=1.0)
        grid = ImageGrid(3, 3)
        rays = build_ray_field(cam, grid)
        obs = ObservationSet.build(rays, [4], [4.0], [[0.0, 0.0, 1.0]])
        cfg = ProblemConfig(bounds=(0.1, 10.0))
        graph = assemble(rays, obs, _flat_weights(grid), cfg, grid)
        # rows: 1 depth + 4 normal + 6 triples * 3
        assert graph.n_residuals == 1 + 4 + 18
        assert graph.describe_block(graph.block_of_row(0))[0] == DEPTH
        assert graph.describe_block(graph.block_of_row(3))[0] == NORMAL
        assert graph.describe_block(graph.block_of_row(10))[0] == COLLINEAR
