"""Levenberg-Marquardt minimization of the assembled energy.

Damping scales the diagonal of J^T J (Marquardt scaling); box bounds on
the depths are enforced by projecting each trial point onto the box.  The
normal equations are solved by a sparse direct factorization, falling
back to diagonally preconditioned conjugate gradients for very large
parameter counts.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError
from .geometry import DepthField

CONVERGED_GRADIENT = "converged-gradient"
CONVERGED_STEP = "converged-step"
CONVERGED_COST = "converged-cost"
MAX_ITER = "max-iter"

LAMBDA_MAX = 1e12
MAX_REJECTS_PER_ITER = 60


@dataclass
class SolverConfig:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    cost_tolerance: float = 1e-9
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 3.0
    cg_threshold: int = 200_000  # params above this use CG, not direct

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name, v in (("gradient_tolerance", self.gradient_tolerance),
                        ("step_tolerance", self.step_tolerance),
                        ("cost_tolerance", self.cost_tolerance),
                        ("initial_lambda", self.initial_lambda)):
            if v <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolveReport:
    initial_cost: float = np.nan
    final_cost: float = np.nan
    iterations: int = 0
    termination: str = MAX_ITER
    cost_trace: list = field(default_factory=list)
    runtime: float = 0.0


def _check_finite(graph, r, what):
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        block = graph.block_of_row(int(bad[0]))
        kind, pixels = graph.describe_block(block)
        raise NumericalError(
            f"non-finite {what} in {kind} residual over pixels {pixels}",
            block_id=block)


def evaluate(graph, depths):
    """Cost, gradient (2 J^T r) and sparse Jacobian at ``depths``."""
    d = depths.vector() if isinstance(depths, DepthField) else \
        np.asarray(depths, dtype=float)
    r, jac = graph.residuals_and_jacobian(d)
    _check_finite(graph, r, "residual")
    if not np.all(np.isfinite(jac.data)):
        coo = jac.tocoo()
        row = int(coo.row[~np.isfinite(coo.data)][0])
        block = graph.block_of_row(row)
        raise NumericalError("non-finite Jacobian entry", block_id=block)
    cost = float(r @ r)
    grad = 2.0 * (jac.T @ r)
    return cost, grad, jac


def _solve_normal_equations(jac, r, lam, cfg):
    """Solve (J^T J + lam * diag(J^T J)) delta = -J^T r."""
    jtj = (jac.T @ jac).tocsc()
    diag = jtj.diagonal()
    # Parameters with no residual support get pure lambda damping so the
    # system stays nonsingular and their step is exactly zero.
    damp = np.where(diag > 0, diag, 1.0)
    a = jtj + sp.diags(lam * damp)
    b = -(jac.T @ r)
    n = jac.shape[1]
    if n <= cfg.cg_threshold:
        try:
            delta = spla.splu(a.tocsc()).solve(b)
        except RuntimeError:
            return None
    else:
        m_inv = sp.diags(1.0 / (a.diagonal()))
        delta, info = spla.cg(a, b, rtol=1e-12, atol=0.0, M=m_inv,
                              maxiter=10 * n)
        if info != 0:
            return None
    if not np.all(np.isfinite(delta)):
        return None
    return delta


def solve(graph, init, cfg=None):
    """Minimize the graph energy starting from ``init``.

    Returns the optimized DepthField and a SolveReport.  Accepted steps
    strictly decrease the cost, so the reported trace is non-increasing.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    lo, hi = graph.bounds
    d = init.vector() if isinstance(init, DepthField) else \
        np.asarray(init, dtype=float).copy()
    if np.any(d < lo - 1e-12) or np.any(d > hi + 1e-12):
        raise ValueError("initial depths violate the parameter bounds")
    d = np.clip(d, lo, hi)

    r, jac = graph.residuals_and_jacobian(d)
    _check_finite(graph, r, "initial residual")
    cost = float(r @ r)
    report = SolveReport(initial_cost=cost, cost_trace=[cost])
    lam = cfg.initial_lambda
    reason = MAX_ITER
    iterations = 0

    for _ in range(cfg.max_iterations):
        grad = 2.0 * (jac.T @ r)
        if np.max(np.abs(grad)) <= cfg.gradient_tolerance * (1.0 + cost):
            reason = CONVERGED_GRADIENT
            break
        iterations += 1

        accepted = False
        for _ in range(MAX_REJECTS_PER_ITER):
            delta = _solve_normal_equations(jac, r, lam, cfg)
            if delta is None:
                lam *= cfg.lambda_up
                if lam > LAMBDA_MAX:
                    raise NumericalError(
                        "normal equations remained singular at maximum "
                        "damping")
                continue
            trial = np.clip(d + delta, lo, hi)
            step = np.max(np.abs(trial - d))
            if step < cfg.step_tolerance:
                reason = CONVERGED_STEP
                accepted = False
                break
            r_trial = graph.residuals(trial)
            cost_trial = float(r_trial @ r_trial)
            if np.isfinite(cost_trial) and cost_trial < cost:
                decrease = cost - cost_trial
                d, cost = trial, cost_trial
                r, jac = graph.residuals_and_jacobian(d)
                report.cost_trace.append(cost)
                lam = max(lam / cfg.lambda_down, 1e-12)
                accepted = True
                if decrease <= cfg.cost_tolerance * (1.0 + cost):
                    reason = CONVERGED_COST
                break
            lam *= cfg.lambda_up
            if lam > LAMBDA_MAX:
                reason = CONVERGED_STEP
                break
        if not accepted:
            if reason == MAX_ITER:
                reason = CONVERGED_STEP
            break
        if reason == CONVERGED_COST:
            break

    report.iterations = iterations
    report.final_cost = cost
    report.termination = reason
    report.runtime = time.perf_counter() - t0

    grid = graph.grid
    depths = d.reshape(grid.shape)
    out = DepthField(grid, depths, np.ones(grid.shape, dtype=bool))
    return out, report
