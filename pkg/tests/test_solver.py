import numpy as np
import pytest

from planardepth.errors import NumericalError
from planardepth.geometry import (ORTHOGRAPHIC, CameraModel, DepthField,
                                  ImageGrid, build_ray_field)
from planardepth.problem import GraphBuilder
from planardepth.solver import (CONVERGED_COST, CONVERGED_GRADIENT,
                                CONVERGED_STEP, MAX_ITER, SolverConfig,
                                evaluate, solve)
from conftest import random_problem
from reference import dense_reference_solve, finite_difference_jacobian


def single_depth_graph(target=4.0, weight=1.0, bounds=(0.1, 20.0)):
    cam = CameraModel(kind=ORTHOGRAPHIC, fx=1.0, fy=1.0)
    grid = ImageGrid(3, 3)
    rays = build_ray_field(cam, grid)
    b = GraphBuilder(grid, rays)
    b.add_depth(4, target, weight)
    return b.build(bounds=bounds), grid


class TestSolve:
    def test_one_dimensional_quadratic(self):
        graph, grid = single_depth_graph(4.0, bounds=(0.01, 20.0))
        init = DepthField.full(grid, 10.0)
        sol, rep = solve(graph, init)
        assert abs(sol.depths[1, 1] - 4.0) < 1e-8
        assert rep.iterations <= 5
        assert rep.termination in (CONVERGED_COST, CONVERGED_GRADIENT,
                                   CONVERGED_STEP)

    def test_monotone_cost_trace(self):
        rng = np.random.default_rng(30)
        _, _, graph, init = random_problem(rng)
        _, rep = solve(graph, init)
        trace = np.asarray(rep.cost_trace)
        assert np.all(np.diff(trace) <= 0)
        assert rep.final_cost == trace[-1]
        assert rep.initial_cost == trace[0]

    def test_feasibility(self):
        rng = np.random.default_rng(31)
        _, _, graph, init = random_problem(rng)
        sol, _ = solve(graph, init)
        lo, hi = graph.bounds
        assert sol.depths.min() >= lo and sol.depths.max() <= hi

    def test_bounds_are_projected(self):
        graph, grid = single_depth_graph(4.0, bounds=(5.0, 20.0))
        init = DepthField.full(grid, 10.0)
        sol, _ = solve(graph, init)
        # the unconstrained optimum 4.0 is below the box
        assert sol.depths[1, 1] == pytest.approx(5.0)

    def test_out_of_bounds_init_rejected(self):
        graph, grid = single_depth_graph(4.0, bounds=(0.1, 5.0))
        init = DepthField.full(grid, 10.0)
        with pytest.raises(ValueError):
            solve(graph, init)

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(32)
        _, _, graph, init = random_problem(rng)
        _, rep1 = solve(graph, init)
        _, rep2 = solve(graph, init)
        assert rep1.cost_trace == rep2.cost_trace
        assert rep1.iterations == rep2.iterations

    def test_non_finite_residual_names_block(self):
        graph, grid = single_depth_graph(np.inf)
        init = DepthField.full(grid, 1.0)
        with pytest.raises(NumericalError) as err:
            solve(graph, init)
        assert err.value.block_id == 0

    def test_max_iterations(self):
        rng = np.random.default_rng(33)
        _, _, graph, init = random_problem(rng)
        _, rep = solve(graph, init, SolverConfig(max_iterations=2))
        assert rep.iterations <= 2
        if rep.iterations == 2:
            assert rep.termination in (MAX_ITER, CONVERGED_COST,
                                       CONVERGED_GRADIENT, CONVERGED_STEP)

    def test_matches_dense_reference_on_8x8(self):
        rng = np.random.default_rng(34)
        cfg = SolverConfig(gradient_tolerance=1e-12, cost_tolerance=1e-14,
                           max_iterations=500)
        for _ in range(3):
            _, _, graph, init = random_problem(rng, two_region=True)
            _, rep = solve(graph, init, cfg)
            _, ref_cost = dense_reference_solve(graph, init.vector())
            assert abs(rep.final_cost - ref_cost) < 1e-8

    def test_exact_fit_single_plane(self):
        rng = np.random.default_rng(35)
        _, _, graph, init = random_problem(rng, noise=0.0)
        _, rep = solve(graph, init)
        assert rep.final_cost < 1e-10

    def test_cg_path_agrees_with_direct(self):
        rng = np.random.default_rng(36)
        _, _, graph, init = random_problem(rng)
        _, rep_direct = solve(graph, init)
        cfg = SolverConfig(cg_threshold=0)
        _, rep_cg = solve(graph, init, cfg)
        assert abs(rep_direct.final_cost - rep_cg.final_cost) < 1e-8


class TestEvaluate:
    def test_zero_residual_state(self):
        graph, grid = single_depth_graph(4.0)
        cost, grad, _ = evaluate(graph, DepthField.full(grid, 4.0))
        assert cost == 0.0
        assert np.all(grad == 0.0)

    def test_single_block_hand_values(self):
        graph, grid = single_depth_graph(4.0)
        cost, grad, _ = evaluate(graph, DepthField.full(grid, 5.0))
        assert cost == pytest.approx(1.0)
        assert grad[4] == pytest.approx(2.0)

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(37)
        for _ in range(3):
            _, _, graph, init = random_problem(rng, width=5, height=5,
                                               ratio=0.3)
            state = init.vector() * rng.uniform(0.9, 1.1,
                                                graph.n_params)
            state = np.clip(state, *graph.bounds)
            cost, grad, _ = evaluate(graph, state)

            def cost_at(x):
                return np.array([graph.cost(x)])

            fd = finite_difference_jacobian(cost_at, state).ravel()
            denom = max(1.0, np.abs(fd).max())
            assert np.abs(grad - fd).max() / denom < 1e-5
