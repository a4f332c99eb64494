"""Per-depth variance estimation from the inverse Gauss-Newton Hessian.

The variance of pixel i is the i-th diagonal entry of (J^T J)^-1
evaluated at the solution.  J^T J is factorized once and each requested
diagonal entry costs one triangular solve, so computing every pixel is
O(n * solve); callers can restrict the pixel set.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .geometry import DepthField

# Dense-eigendecomposition fallback is only attempted below this size.
DENSE_FALLBACK_MAX = 2048
SOLVE_CHUNK = 256


@dataclass
class ConfidenceField:
    """Per-pixel variance with availability and keep flags."""

    grid: object
    variances: np.ndarray  # (H, W) float, NaN where unavailable
    available: np.ndarray  # (H, W) bool

    def keep_mask(self, threshold):
        return self.available & (self.variances < threshold)


def estimate_variances(graph, solution, pixels=None):
    """Diagonal of (J^T J)^-1 at the solution, as a ConfidenceField.

    Structurally decoupled parameters (empty Jacobian column) and
    parameters in the null space of a rank-deficient J^T J are flagged
    unavailable instead of failing the whole computation.
    """
    d = solution.vector() if isinstance(solution, DepthField) else \
        np.asarray(solution, dtype=float)
    _, jac = graph.residuals_and_jacobian(d)
    n = graph.n_params
    if pixels is None:
        pixels = np.arange(n)
    else:
        pixels = np.asarray(pixels, dtype=np.int64)

    variances = np.full(n, np.nan)
    available = np.zeros(n, dtype=bool)

    jtj = (jac.T @ jac).tocsc()
    diag = jtj.diagonal()
    coupled = diag > 0.0
    wanted = np.zeros(n, dtype=bool)
    wanted[pixels] = True
    targets = np.flatnonzero(coupled & wanted)

    if targets.size:
        sub = jtj[coupled][:, coupled].tocsc()
        pos_of = -np.ones(n, dtype=np.int64)
        pos_of[np.flatnonzero(coupled)] = np.arange(coupled.sum())
        lu = None
        try:
            lu = spla.splu(sub)
        except RuntimeError:
            lu = None
        if lu is not None:
            cols = pos_of[targets]
            for start in range(0, len(cols), SOLVE_CHUNK):
                chunk = cols[start:start + SOLVE_CHUNK]
                rhs = np.zeros((sub.shape[0], len(chunk)))
                rhs[chunk, np.arange(len(chunk))] = 1.0
                sol = lu.solve(rhs)
                var = sol[chunk, np.arange(len(chunk))]
                ok = np.isfinite(var) & (var > 0)
                idx = targets[start:start + SOLVE_CHUNK]
                variances[idx[ok]] = var[ok]
                available[idx[ok]] = True
        elif sub.shape[0] <= DENSE_FALLBACK_MAX:
            # Rank-deficient: eigendecompose and invert the range space;
            # parameters with null-space support stay unavailable.
            dense = sub.toarray()
            evals, evecs = np.linalg.eigh(dense)
            tol = max(dense.shape) * np.finfo(float).eps * max(
                evals.max(), 0.0)
            null = evals <= tol
            null_support = (evecs[:, null] ** 2).sum(axis=1)
            inv_evals = np.where(null, 0.0, 1.0 / np.where(null, 1.0, evals))
            diag_pinv = (evecs ** 2 @ inv_evals)
            for t in targets:
                p = pos_of[t]
                if null_support[p] < 1e-12 and diag_pinv[p] > 0:
                    variances[t] = diag_pinv[p]
                    available[t] = True

    shape = graph.grid.shape
    return ConfidenceField(graph.grid, variances.reshape(shape),
                           available.reshape(shape))


def filter_depths(depths, conf, threshold):
    """Invalidate depths whose variance is missing or >= threshold.

    Depth values are never modified, only the validity mask.
    """
    if conf.grid.shape != depths.grid.shape:
        raise ValueError("confidence and depth grids disagree")
    out = depths.copy()
    out.valid &= conf.keep_mask(threshold)
    return out
