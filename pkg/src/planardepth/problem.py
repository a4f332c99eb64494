"""Sparse nonlinear least-squares assembly of the upsampling energy.

The total cost is a sum of squared residuals: per-observation depth
residuals and point-to-plane normal residuals (the data term), plus
either collinearity triples (planar regularizer) or neighbor depth
differences (constant-depth baseline).  Weights enter as square roots at
the residual level so the framework's sum of squares reproduces the
weighted energy exactly.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .geometry import (all_collinearity_triples, neighbor_pairs, neighbors4,
                       point_from_depth)

DEPTH = "depth"
NORMAL = "normal"
COLLINEAR = "collinear"
BASELINE = "baseline"

# Segments shorter than this deactivate their collinearity block for the
# current evaluation; the 1/length factor in the Jacobian would blow up.
EPS_LEN = 1e-9


@dataclass
class ObservationSet:
    """Per-pixel depth observations with optional surface normals.

    ``plane_offsets[m]`` anchors the normal's plane at the observed point:
    d_P = n . ray(d_obs).  It is computed once at construction and treated
    as a fixed pseudo-measurement afterwards.
    """

    pixels: np.ndarray         # (m,) sorted linear indices
    depths: np.ndarray         # (m,)
    normals: np.ndarray        # (m, 3)
    normal_valid: np.ndarray   # (m,) bool
    plane_offsets: np.ndarray  # (m,)

    def __len__(self):
        return len(self.pixels)

    @classmethod
    def build(cls, rays, pixels, depths, normals=None, normal_valid=None):
        """Validate, deduplicate and derive plane offsets.

        Multiple observations landing on one pixel keep the smallest depth
        (the closest surface wins).
        """
        pixels = np.asarray(pixels, dtype=np.int64).reshape(-1)
        depths = np.asarray(depths, dtype=float).reshape(-1)
        if len(pixels) != len(depths):
            raise ValueError("pixels and depths length mismatch")
        if len(pixels) == 0:
            raise ConfigurationError("observation set is empty")
        n_pix = rays.grid.num_pixels
        if pixels.min() < 0 or pixels.max() >= n_pix:
            raise ValueError("observation pixel index out of grid")
        if not np.all(np.isfinite(depths)) or np.any(depths <= 0):
            raise ValueError("observed depths must be finite and positive")
        if normals is None:
            normals = np.zeros((len(pixels), 3))
            normal_valid = np.zeros(len(pixels), dtype=bool)
        else:
            normals = np.asarray(normals, dtype=float).reshape(-1, 3)
            if normal_valid is None:
                normal_valid = np.ones(len(pixels), dtype=bool)
            normal_valid = np.asarray(normal_valid, dtype=bool).reshape(-1)
            norms = np.linalg.norm(normals[normal_valid], axis=1)
            if norms.size and np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError("valid normals must be unit length")

        # Closest-return-wins dedup: stable sort by (pixel, depth).
        order = np.lexsort((depths, pixels))
        pixels, depths = pixels[order], depths[order]
        normals, normal_valid = normals[order], normal_valid[order]
        keep = np.ones(len(pixels), dtype=bool)
        keep[1:] = pixels[1:] != pixels[:-1]
        pixels, depths = pixels[keep], depths[keep]
        normals, normal_valid = normals[keep], normal_valid[keep]

        ori = rays.flat_origins()[pixels]
        dirs = rays.flat_directions()[pixels]
        pts = ori + depths[:, None] * dirs
        offsets = np.einsum("ij,ij->i", normals, pts)
        return cls(pixels, depths, normals, normal_valid, offsets)


@dataclass
class ProblemConfig:
    """Energy assembly parameters."""

    w_data: float = 1.0
    baseline_mode: bool = False
    bounds: tuple = None       # (d_min, d_max); observed range if None
    eps_len: float = EPS_LEN

    def __post_init__(self):
        if self.w_data <= 0:
            raise ConfigurationError("w_data must be positive")
        if self.eps_len <= 0:
            raise ConfigurationError("eps_len must be positive")
        if self.bounds is not None:
            lo, hi = self.bounds
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigurationError("bounds must satisfy d_min < d_max")


def depth_residual(d_hat, d_obs):
    """Difference between estimated and observed depth; d(res)/dd = 1."""
    return d_hat - d_obs


def baseline_residual(d_hat_i, d_hat_n):
    """Neighbor depth difference of the constant-depth regularizer."""
    return d_hat_i - d_hat_n


def normal_residual(rays, normal, d_plane, neighbor, d_hat_n):
    """Signed distance of the neighbor's point to the observed plane."""
    p = point_from_depth(rays, neighbor, d_hat_n)
    return float(np.asarray(normal) @ p) - d_plane


def normal_residual_jacobian(rays, normal, neighbor):
    """d(normal residual)/d(depth) = n . dir."""
    return float(np.asarray(normal) @ rays.direction(neighbor))


def collinearity_residual(p_j, p_i, p_k, eps_len=EPS_LEN):
    """Difference of the unit directions j->i and i->k.

    Zero exactly when the three points are collinear with i between the
    outer two.  Degenerate segments (shorter than ``eps_len``) deactivate
    the block: the residual is reported as zero.
    """
    p_j = np.asarray(p_j, dtype=float)
    p_i = np.asarray(p_i, dtype=float)
    p_k = np.asarray(p_k, dtype=float)
    d_ji = p_i - p_j
    d_ik = p_k - p_i
    l_ji = np.linalg.norm(d_ji)
    l_ik = np.linalg.norm(d_ik)
    if l_ji < eps_len or l_ik < eps_len:
        return np.zeros(3)
    return d_ji / l_ji - d_ik / l_ik


def collinearity_jacobian(p_j, p_i, p_k, dir_j, dir_i, dir_k,
                          eps_len=EPS_LEN):
    """Jacobian of the collinearity residual w.r.t. the three depths.

    Returns a (3, 3) matrix whose columns are d(res)/dd_j, d(res)/dd_i,
    d(res)/dd_k, obtained via the unit-normalization derivative
    (I - u u^T)/|delta| chained with the ray directions.
    """
    p_j = np.asarray(p_j, dtype=float)
    p_i = np.asarray(p_i, dtype=float)
    p_k = np.asarray(p_k, dtype=float)
    d_ji = p_i - p_j
    d_ik = p_k - p_i
    l_ji = np.linalg.norm(d_ji)
    l_ik = np.linalg.norm(d_ik)
    if l_ji < eps_len or l_ik < eps_len:
        return np.zeros((3, 3))
    u_ji = d_ji / l_ji
    u_ik = d_ik / l_ik
    proj_ji = (np.eye(3) - np.outer(u_ji, u_ji)) / l_ji
    proj_ik = (np.eye(3) - np.outer(u_ik, u_ik)) / l_ik
    col_j = -proj_ji @ np.asarray(dir_j, dtype=float)
    col_i = (proj_ji + proj_ik) @ np.asarray(dir_i, dtype=float)
    col_k = -proj_ik @ np.asarray(dir_k, dtype=float)
    return np.stack([col_j, col_i, col_k], axis=1)


class GraphBuilder:
    """Accumulates residual blocks before freezing them into a graph."""

    def __init__(self, grid, rays=None):
        self.grid = grid
        self.rays = rays
        self.depth_pix = []
        self.depth_obs = []
        self.depth_sqrtw = []
        self.normal_pix = []
        self.normal_vec = []
        self.normal_off = []
        self.normal_sqrtw = []
        self.tri_jik = []
        self.tri_sqrtw = []
        self.pair_in = []
        self.pair_sqrtw = []

    def add_depth(self, pixel, d_obs, weight=1.0):
        self.depth_pix.append(pixel)
        self.depth_obs.append(d_obs)
        self.depth_sqrtw.append(np.sqrt(weight))

    def add_normal(self, pixel, normal, d_plane, weight=1.0):
        self.normal_pix.append(pixel)
        self.normal_vec.append(np.asarray(normal, dtype=float))
        self.normal_off.append(d_plane)
        self.normal_sqrtw.append(np.sqrt(weight))

    def add_collinear(self, j, i, k, weight=1.0):
        self.tri_jik.append((j, i, k))
        self.tri_sqrtw.append(np.sqrt(weight))

    def add_baseline(self, i, n, weight=1.0):
        self.pair_in.append((i, n))
        self.pair_sqrtw.append(np.sqrt(weight))

    def build(self, bounds, eps_len=EPS_LEN):
        return ResidualGraph(
            grid=self.grid, rays=self.rays,
            depth_pix=np.asarray(self.depth_pix, dtype=np.int64),
            depth_obs=np.asarray(self.depth_obs, dtype=float),
            depth_sqrtw=np.asarray(self.depth_sqrtw, dtype=float),
            normal_pix=np.asarray(self.normal_pix, dtype=np.int64),
            normal_vec=(np.asarray(self.normal_vec, dtype=float)
                        .reshape(-1, 3)),
            normal_off=np.asarray(self.normal_off, dtype=float),
            normal_sqrtw=np.asarray(self.normal_sqrtw, dtype=float),
            tri_jik=(np.asarray(self.tri_jik, dtype=np.int64)
                     .reshape(-1, 3)),
            tri_sqrtw=np.asarray(self.tri_sqrtw, dtype=float),
            pair_in=np.asarray(self.pair_in, dtype=np.int64).reshape(-1, 2),
            pair_sqrtw=np.asarray(self.pair_sqrtw, dtype=float),
            bounds=bounds, eps_len=eps_len)


@dataclass
class ResidualGraph:
    """Frozen residual blocks with vectorized evaluation.

    Block order is deterministic: depth blocks, then normal blocks, then
    regularizer blocks (collinearity triples or baseline pairs).  Depth,
    normal and baseline blocks contribute one residual row each;
    collinearity blocks contribute three.
    """

    grid: object
    rays: object
    depth_pix: np.ndarray
    depth_obs: np.ndarray
    depth_sqrtw: np.ndarray
    normal_pix: np.ndarray
    normal_vec: np.ndarray
    normal_off: np.ndarray
    normal_sqrtw: np.ndarray
    tri_jik: np.ndarray
    tri_sqrtw: np.ndarray
    pair_in: np.ndarray
    pair_sqrtw: np.ndarray
    bounds: tuple
    eps_len: float = EPS_LEN

    def __post_init__(self):
        lo, hi = self.bounds
        if not lo < hi:
            raise ConfigurationError("graph bounds must satisfy lo < hi")
        self.n_params = self.grid.num_pixels
        nd, nn = len(self.depth_pix), len(self.normal_pix)
        nt, np_ = len(self.tri_jik), len(self.pair_in)
        self.num_blocks = nd + nn + nt + np_
        self.n_residuals = nd + nn + 3 * nt + np_
        self._row0_normal = nd
        self._row0_tri = nd + nn
        self._row0_pair = nd + nn + 3 * nt
        if nn:
            flat_o = self.rays.flat_origins()[self.normal_pix]
            flat_d = self.rays.flat_directions()[self.normal_pix]
            self._normal_a = np.einsum("ij,ij->i", self.normal_vec, flat_o)
            self._normal_c = np.einsum("ij,ij->i", self.normal_vec, flat_d)
        else:
            self._normal_a = np.zeros(0)
            self._normal_c = np.zeros(0)

    # -- block bookkeeping -------------------------------------------------

    def block_of_row(self, row):
        """Block id owning a residual row (for diagnostics)."""
        nd, nn = len(self.depth_pix), len(self.normal_pix)
        if row < self._row0_tri:
            return int(row)
        if row < self._row0_pair:
            return nd + nn + (row - self._row0_tri) // 3
        return nd + nn + len(self.tri_jik) + (row - self._row0_pair)

    def describe_block(self, block_id):
        nd, nn, nt = (len(self.depth_pix), len(self.normal_pix),
                      len(self.tri_jik))
        if block_id < nd:
            return DEPTH, (int(self.depth_pix[block_id]),)
        block_id -= nd
        if block_id < nn:
            return NORMAL, (int(self.normal_pix[block_id]),)
        block_id -= nn
        if block_id < nt:
            return COLLINEAR, tuple(int(x) for x in self.tri_jik[block_id])
        block_id -= nt
        return BASELINE, tuple(int(x) for x in self.pair_in[block_id])

    # -- evaluation ---------------------------------------------------------

    def _points(self, depths):
        return (self.rays.flat_origins()
                + depths[:, None] * self.rays.flat_directions())

    def residuals(self, depths):
        depths = np.asarray(depths, dtype=float)
        r = np.zeros(self.n_residuals)
        r[:len(self.depth_pix)] = self.depth_sqrtw * (
            depths[self.depth_pix] - self.depth_obs)
        if len(self.normal_pix):
            r[self._row0_normal:self._row0_tri] = self.normal_sqrtw * (
                self._normal_a + depths[self.normal_pix] * self._normal_c
                - self.normal_off)
        if len(self.tri_jik):
            res, _ = self._collinear_terms(depths, with_jacobian=False)
            r[self._row0_tri:self._row0_pair] = res.reshape(-1)
        if len(self.pair_in):
            r[self._row0_pair:] = self.pair_sqrtw * (
                depths[self.pair_in[:, 0]] - depths[self.pair_in[:, 1]])
        return r

    def cost(self, depths):
        r = self.residuals(depths)
        return float(r @ r)

    def _collinear_terms(self, depths, with_jacobian):
        """Residuals (t, 3) and optional Jacobian columns for all triples."""
        jik = self.tri_jik
        pts = self._points(depths)
        dirs = self.rays.flat_directions()
        p_j, p_i, p_k = pts[jik[:, 0]], pts[jik[:, 1]], pts[jik[:, 2]]
        d_ji = p_i - p_j
        d_ik = p_k - p_i
        l_ji = np.linalg.norm(d_ji, axis=1)
        l_ik = np.linalg.norm(d_ik, axis=1)
        active = (l_ji >= self.eps_len) & (l_ik >= self.eps_len)
        l_ji_s = np.where(active, l_ji, 1.0)
        l_ik_s = np.where(active, l_ik, 1.0)
        u_ji = d_ji / l_ji_s[:, None]
        u_ik = d_ik / l_ik_s[:, None]
        w = self.tri_sqrtw * active
        res = w[:, None] * (u_ji - u_ik)
        if not with_jacobian:
            return res, None

        def apply_proj(u, length, vec):
            # (I - u u^T) vec / length, row-wise
            return (vec - u * np.einsum("ij,ij->i", u, vec)[:, None]) \
                / length[:, None]

        dir_j = dirs[jik[:, 0]]
        dir_i = dirs[jik[:, 1]]
        dir_k = dirs[jik[:, 2]]
        col_j = -w[:, None] * apply_proj(u_ji, l_ji_s, dir_j)
        col_i = w[:, None] * (apply_proj(u_ji, l_ji_s, dir_i)
                              + apply_proj(u_ik, l_ik_s, dir_i))
        col_k = -w[:, None] * apply_proj(u_ik, l_ik_s, dir_k)
        return res, (col_j, col_i, col_k)

    def residuals_and_jacobian(self, depths):
        """Residual vector and sparse Jacobian in CSR form.

        Triangle entries are emitted in a fixed order, so the structure and
        values are deterministic for identical inputs.
        """
        depths = np.asarray(depths, dtype=float)
        r = np.zeros(self.n_residuals)
        rows, cols, vals = [], [], []

        nd = len(self.depth_pix)
        if nd:
            r[:nd] = self.depth_sqrtw * (depths[self.depth_pix]
                                         - self.depth_obs)
            rows.append(np.arange(nd))
            cols.append(self.depth_pix)
            vals.append(self.depth_sqrtw.copy())

        nn = len(self.normal_pix)
        if nn:
            r0 = self._row0_normal
            r[r0:r0 + nn] = self.normal_sqrtw * (
                self._normal_a + depths[self.normal_pix] * self._normal_c
                - self.normal_off)
            rows.append(np.arange(r0, r0 + nn))
            cols.append(self.normal_pix)
            vals.append(self.normal_sqrtw * self._normal_c)

        nt = len(self.tri_jik)
        if nt:
            res, (col_j, col_i, col_k) = self._collinear_terms(
                depths, with_jacobian=True)
            r0 = self._row0_tri
            r[r0:r0 + 3 * nt] = res.reshape(-1)
            block_rows = r0 + 3 * np.arange(nt)[:, None] + np.arange(3)
            for cidx, colv in ((0, col_j), (1, col_i), (2, col_k)):
                rows.append(block_rows.reshape(-1))
                cols.append(np.repeat(self.tri_jik[:, cidx], 3))
                vals.append(colv.reshape(-1))

        npair = len(self.pair_in)
        if npair:
            r0 = self._row0_pair
            r[r0:] = self.pair_sqrtw * (depths[self.pair_in[:, 0]]
                                        - depths[self.pair_in[:, 1]])
            rr = np.arange(r0, r0 + npair)
            rows.extend([rr, rr])
            cols.extend([self.pair_in[:, 0], self.pair_in[:, 1]])
            vals.extend([self.pair_sqrtw.copy(), -self.pair_sqrtw])

        if rows:
            rows = np.concatenate(rows)
            cols = np.concatenate(cols)
            vals = np.concatenate(vals)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        jac = sp.csr_matrix((vals, (rows, cols)),
                            shape=(self.n_residuals, self.n_params))
        return r, jac


def assemble(rays, obs, weights, cfg, grid):
    """Build the residual graph for the full image.

    Emits one depth block per observation, one normal block per
    (observation with valid normal, 4-neighbor) pair, and per pixel the
    horizontal/vertical collinearity triples (or ordered baseline pairs in
    baseline mode), each carrying the square root of its weight.
    """
    if len(obs) == 0:
        raise ConfigurationError("cannot assemble a problem with no data")
    if rays.grid.shape != grid.shape or weights.grid.shape != grid.shape:
        raise ConfigurationError("rays, weights and grid sizes disagree")

    bounds = cfg.bounds
    if bounds is None:
        bounds = (float(obs.depths.min()), float(obs.depths.max()))
        if not bounds[0] < bounds[1]:
            bounds = (bounds[0] * 0.5, bounds[1] * 2.0)

    b = GraphBuilder(grid, rays)
    b.depth_pix = list(obs.pixels)
    b.depth_obs = list(obs.depths)
    b.depth_sqrtw = [np.sqrt(cfg.w_data)] * len(obs)

    # Normal residuals share w_data with the depth residuals.
    for m in np.flatnonzero(obs.normal_valid):
        for nb in neighbors4(grid, int(obs.pixels[m])):
            b.add_normal(nb, obs.normals[m], obs.plane_offsets[m],
                         cfg.w_data)

    h, w_ = grid.shape
    pair = weights.pair

    def dir_select(dr, dc):
        # up=0, down=1, left=2, right=3 (matches the weight-field layout)
        return np.where(dr == -1, 0,
                        np.where(dr == 1, 1, np.where(dc == -1, 2, 3)))

    if cfg.baseline_mode:
        pairs = neighbor_pairs(grid)
        ri, ci = np.divmod(pairs[:, 0], w_)
        rj, cj = np.divmod(pairs[:, 1], w_)
        didx = dir_select(rj - ri, cj - ci)
        w_in = pair[ri, ci, didx]
        b.pair_in = [tuple(p) for p in pairs]
        b.pair_sqrtw = list(np.sqrt(w_in))
    else:
        triples = all_collinearity_triples(grid)
        ri, ci = np.divmod(triples[:, 1], w_)
        rj, cj = np.divmod(triples[:, 0], w_)
        rk, ck = np.divmod(triples[:, 2], w_)
        dj = dir_select(rj - ri, cj - ci)
        dk = dir_select(rk - ri, ck - ci)
        w_tri = pair[ri, ci, dj] * pair[ri, ci, dk]
        b.tri_jik = [tuple(t) for t in triples]
        b.tri_sqrtw = list(np.sqrt(w_tri))

    return b.build(bounds=bounds, eps_len=cfg.eps_len)
