"""Discrete incompressible Navier-Stokes operators on a uniform periodic grid.

Velocities live on the grid nodes (x-block then y-block, node ``(j, i)`` has
flat index ``j * nx + i``), pressures on the cells between four nodes.  Solid
bodies, channel walls and the inflow fringe are imposed by volume
penalization, which keeps every node a degree of freedom and the grid
tensorized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

BRINKMAN_DRAG = 1.0e4


class SolverError(RuntimeError):
    """Conjugate gradient did not reach the requested tolerance."""

    def __init__(self, message, residual_norm):
        super().__init__(f"{message} (residual norm {residual_norm:.3e})")
        self.residual_norm = residual_norm


@dataclass
class GridSpec:
    """Uniform node grid, periodic in both directions.

    ``obstacle_mask`` has shape ``(ny, nx)``; ``inflow_profile`` holds the
    target x-velocity per grid row, enforced inside the fringe (the last
    ``fringe_width`` node columns).
    """

    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple = (0.0, 0.0)
    obstacle_mask: np.ndarray = None
    inflow_profile: np.ndarray = None
    fringe_width: int = 0
    fringe_strength: float = 0.0

    def __post_init__(self):
        if self.obstacle_mask is None:
            self.obstacle_mask = np.zeros((self.ny, self.nx), dtype=bool)
        if self.inflow_profile is None:
            self.inflow_profile = np.zeros(self.ny)
        self.obstacle_mask = np.asarray(self.obstacle_mask, dtype=bool)
        self.inflow_profile = np.asarray(self.inflow_profile, dtype=float)
        self.origin = tuple(float(o) for o in self.origin)

    @property
    def n_nodes(self):
        return self.nx * self.ny

    def validate(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs nx, ny >= 4, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("grid spacings must be positive")
        if self.obstacle_mask.shape != (self.ny, self.nx):
            raise ValueError(
                f"obstacle_mask shape {self.obstacle_mask.shape} != {(self.ny, self.nx)}")
        if self.inflow_profile.shape != (self.ny,):
            raise ValueError(f"inflow_profile must have length ny={self.ny}")
        if self.obstacle_mask.all():
            raise ValueError("empty fluid domain")
        if not 0 <= self.fringe_width < self.nx:
            raise ValueError("fringe_width must lie in [0, nx)")

    def node_coordinates(self):
        """Return ``(X, Y)`` arrays of shape ``(ny, nx)``."""
        x = self.origin[0] + self.dx * np.arange(self.nx)
        y = self.origin[1] + self.dy * np.arange(self.ny)
        return np.meshgrid(x, y)

    def fringe_rate(self):
        """Per-node relaxation rate toward the inflow profile, shape ``(ny, nx)``."""
        rate = np.zeros((self.ny, self.nx))
        if self.fringe_width and self.fringe_strength:
            s = (np.arange(self.fringe_width) + 1.0) / self.fringe_width
            ramp = self.fringe_strength * np.sin(0.5 * np.pi * s) ** 2
            rate[:, self.nx - self.fringe_width:] = ramp[None, :]
        return rate


def _periodic_index(grid):
    j, i = np.divmod(np.arange(grid.n_nodes), grid.nx)
    east = j * grid.nx + (i + 1) % grid.nx
    west = j * grid.nx + (i - 1) % grid.nx
    north = ((j + 1) % grid.ny) * grid.nx + i
    south = ((j - 1) % grid.ny) * grid.nx + i
    return east, west, north, south


@dataclass
class ConvectionStencil:
    """Fixed CSR pattern of ``N(w)`` plus the linear map ``w -> N(w).data``."""

    shape: tuple
    indptr: np.ndarray
    indices: np.ndarray
    weights: sp.csr_matrix  # nnz x n_v

    def assemble(self, w):
        data = self.weights @ w
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


def _build_convection_stencil(grid, mass):
    n = grid.n_nodes
    east, west, north, south = _periodic_index(grid)
    node = np.arange(n)
    m = mass[:n]
    cx = 0.25 * m / grid.dx  # 1/2 (skew form) * 1/(2 dx) (central difference)
    cy = 0.25 * m / grid.dy

    # Entry (node, nbr) of one component block is c * (w_d[node] + w_d[nbr]),
    # with d the direction of the neighbour and a sign for west/south.
    rows, cols, wi, wj, coef = [], [], [], [], []
    for nbr, off, c in ((east, 0, cx), (west, 0, -cx), (north, n, cy), (south, n, -cy)):
        rows.append(node)
        cols.append(nbr)
        wi.append(node + off)
        wj.append(nbr + off)
        coef.append(c)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    wi = np.concatenate(wi)
    wj = np.concatenate(wj)
    coef = np.concatenate(coef)

    order = np.lexsort((cols, rows))
    rows, cols, wi, wj, coef = rows[order], cols[order], wi[order], wj[order], coef[order]
    nnz_block = rows.size

    # Same block on both velocity components.
    all_rows = np.concatenate([rows, rows + n])
    all_cols = np.concatenate([cols, cols + n])
    indptr = np.zeros(2 * n + 1, dtype=np.int64)
    np.add.at(indptr, all_rows + 1, 1)
    indptr = np.cumsum(indptr)

    k = np.arange(nnz_block)
    trows = np.concatenate([k, k, k + nnz_block, k + nnz_block])
    tcols = np.concatenate([wi, wj, wi, wj])
    tvals = np.concatenate([coef, coef, coef, coef])
    weights = sp.csr_matrix((tvals, (trows, tcols)), shape=(2 * nnz_block, 2 * n))
    weights.sum_duplicates()
    return ConvectionStencil((2 * n, 2 * n), indptr, all_cols.astype(np.int64), weights)


def _build_divergence(grid):
    """Cell-averaged divergence times cell area, shape ``(n_cells, n_v)``."""
    n = grid.n_nodes
    j, i = np.divmod(np.arange(n), grid.nx)
    ip = (i + 1) % grid.nx
    jp = (j + 1) % grid.ny
    sw = j * grid.nx + i
    se = j * grid.nx + ip
    nw = jp * grid.nx + i
    ne = jp * grid.nx + ip
    hx = 0.5 * grid.dy  # area / (2 dx)
    hy = 0.5 * grid.dx
    cell = np.arange(n)
    rows = np.tile(cell, 8)
    cols = np.concatenate([se, ne, sw, nw, nw + n, ne + n, sw + n, se + n])
    vals = np.concatenate([np.full(n, hx), np.full(n, hx), np.full(n, -hx), np.full(n, -hx),
                           np.full(n, hy), np.full(n, hy), np.full(n, -hy), np.full(n, -hy)])
    J = sp.csr_matrix((vals, (rows, cols)), shape=(n, 2 * n))
    J.sum_duplicates()
    J.sort_indices()
    return J


def _build_stiffness(grid):
    """``M (-Laplacian)`` with the periodic 5-point stencil, one component."""
    n = grid.n_nodes
    east, west, north, south = _periodic_index(grid)
    ax = grid.dy / grid.dx
    ay = grid.dx / grid.dy
    node = np.arange(n)
    rows = np.concatenate([node, node, node, node, node])
    cols = np.concatenate([node, east, west, north, south])
    vals = np.concatenate([np.full(n, 2 * ax + 2 * ay), np.full(n, -ax), np.full(n, -ax),
                           np.full(n, -ay), np.full(n, -ay)])
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    K.sum_duplicates()
    K.sort_indices()
    return K


def pressure_nullspace(grid):
    """Orthonormal basis of the kernel of ``J^T``: constant and, on even grids, checkerboard."""
    n = grid.n_nodes
    vecs = [np.ones(n)]
    if grid.nx % 2 == 0 and grid.ny % 2 == 0:
        j, i = np.divmod(np.arange(n), grid.nx)
        vecs.append(np.where((i + j) % 2 == 0, 1.0, -1.0))
    Z = np.column_stack(vecs)
    return Z / np.sqrt(n)


@dataclass
class DiscreteOperators:
    grid: GridSpec
    reynolds: float
    M: np.ndarray
    A: sp.csr_matrix
    J: sp.csr_matrix
    f: np.ndarray
    convection_stencil: ConvectionStencil
    penalized: np.ndarray  # rows carrying a penalization term, listed explicitly
    S: sp.csr_matrix
    pressure_null: np.ndarray
    cg_tol: float = 1e-10
    cg_maxiter: int = 0

    @property
    def n_v(self):
        return self.M.size

    @property
    def n_p(self):
        return self.J.shape[0]

    def convection(self, w):
        return assemble_convection(self, w)


def assemble_operators(grid, reynolds, cg_tol=1e-10, cg_maxiter=None):
    """Assemble ``M, A, J, f`` and the convection stencil for ``grid``."""
    grid.validate()
    if not reynolds > 0:
        raise ValueError(f"reynolds must be positive, got {reynolds}")
    n = grid.n_nodes
    M = np.full(2 * n, grid.dx * grid.dy)

    K = _build_stiffness(grid)
    mask = grid.obstacle_mask.ravel()
    fringe = grid.fringe_rate().ravel()
    rate = np.where(mask, BRINKMAN_DRAG, 0.0) + np.where(mask, 0.0, fringe)
    rate2 = np.concatenate([rate, rate])
    A = sp.block_diag([K, K], format="csr") / reynolds + sp.diags(rate2 * M, format="csr")
    A.sort_indices()

    target = np.zeros(2 * n)
    target[:n] = np.where(mask, 0.0, np.repeat(grid.inflow_profile, grid.nx))
    f = rate2 * M * target

    J = _build_divergence(grid)
    S = (J @ sp.diags(1.0 / M) @ J.T).tocsr()
    S.sort_indices()
    penalized = np.flatnonzero(rate2 > 0)
    if cg_maxiter is None:
        cg_maxiter = 5 * J.shape[0]
    return DiscreteOperators(
        grid=grid, reynolds=float(reynolds), M=M, A=A, J=J, f=f,
        convection_stencil=_build_convection_stencil(grid, M),
        penalized=penalized, S=S, pressure_null=pressure_nullspace(grid),
        cg_tol=cg_tol, cg_maxiter=int(cg_maxiter))


def assemble_convection(ops, w):
    """Return the sparse convection matrix ``N(w)``; linear in ``w``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (ops.n_v,):
        raise ValueError(f"expected velocity of length {ops.n_v}, got shape {w.shape}")
    return ops.convection_stencil.assemble(w)


def convection_direct(grid, w, v):
    """Pointwise skew-symmetric central-difference convection ``M-weighted``; test oracle path."""
    n = grid.n_nodes
    shape = (grid.ny, grid.nx)
    wx, wy = w[:n].reshape(shape), w[n:].reshape(shape)
    out = []
    for c in (v[:n].reshape(shape), v[n:].reshape(shape)):
        dx = (np.roll(c, -1, axis=1) - np.roll(c, 1, axis=1)) / (2 * grid.dx)
        dy = (np.roll(c, -1, axis=0) - np.roll(c, 1, axis=0)) / (2 * grid.dy)
        fx, fy = wx * c, wy * c
        dfx = (np.roll(fx, -1, axis=1) - np.roll(fx, 1, axis=1)) / (2 * grid.dx)
        dfy = (np.roll(fy, -1, axis=0) - np.roll(fy, 1, axis=0)) / (2 * grid.dy)
        out.append(0.5 * (wx * dx + wy * dy + dfx + dfy).ravel())
    return np.concatenate(out) * grid.dx * grid.dy


def conjugate_gradient(matvec, b, x0, tol, maxiter, null=None):
    """Solve ``S x = b`` for symmetric positive (semi)definite ``S``.

    With ``null`` given, iterates are kept orthogonal to its columns, which
    must span the kernel of ``S``.  Stops at ``||r|| <= tol * ||b||``.
    """

    def deflate(y):
        if null is None:
            return y
        return y - null @ (null.T @ y)

    b = deflate(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    x = deflate(x0.copy())
    r = b - matvec(x)
    if r @ r >= bnorm**2:
        x = np.zeros_like(b)
        r = b.copy()
    p = r.copy()
    rr = r @ r
    target = (tol * bnorm) ** 2
    for it in range(1, maxiter + 1):
        if rr <= target:
            return x, it - 1
        q = matvec(p)
        pq = p @ q
        if not pq > 0:
            break
        alpha = rr / pq
        x += alpha * p
        r -= alpha * q
        if it % 50 == 0:
            x = deflate(x)
            r = b - matvec(x)
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        if null is not None:
            p = deflate(p)
    if rr <= target:
        return x, maxiter
    raise SolverError(f"CG did not converge in {maxiter} iterations", np.sqrt(rr))


@dataclass
class ProjectorContext:
    """Per-thread state for applying ``Pi`` and recovering pressure.

    Keeps the last pressure solution as a warm start for the next solve.
    """

    ops: DiscreteOperators
    last_solution: np.ndarray = field(default=None, repr=False)
    iterations: int = 0

    def __post_init__(self):
        if self.last_solution is None:
            self.last_solution = np.zeros(self.ops.n_p)

    def solve_schur(self, rhs):
        """Deflated CG solve of ``S p = rhs``; result is orthogonal to the pressure kernel."""
        ops = self.ops
        p, it = conjugate_gradient(ops.S.dot, rhs, self.last_solution, ops.cg_tol,
                                   ops.cg_maxiter, null=ops.pressure_null)
        p = p - ops.pressure_null @ (ops.pressure_null.T @ p)
        self.last_solution = p
        self.iterations = it
        return p


def apply_pi(ctx, x, transpose=False):
    """Return ``Pi x`` or ``Pi^T x`` with ``Pi = I - M^-1 J^T S^-1 J``."""
    ops = ctx.ops
    x = np.asarray(x, dtype=float)
    if x.shape != (ops.n_v,):
        raise ValueError(f"expected vector of length {ops.n_v}, got shape {x.shape}")
    if transpose:
        p = ctx.solve_schur(ops.J @ (x / ops.M))
        return x - ops.J.T @ p
    p = ctx.solve_schur(ops.J @ x)
    return x - (ops.J.T @ p) / ops.M


def recover_pressure(ctx, v):
    """Pressure ``S^-1 J M^-1 (N(v) v + A v - f)`` with the kernel component removed."""
    ops = ctx.ops
    v = np.asarray(v, dtype=float)
    if v.shape != (ops.n_v,):
        raise ValueError(f"expected velocity of length {ops.n_v}, got shape {v.shape}")
    rhs = ops.J @ ((assemble_convection(ops, v) @ v + ops.A @ v - ops.f) / ops.M)
    return ctx.solve_schur(rhs)


def mnorm(ops, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (ops.n_v,):
        raise ValueError(f"expected vector of length {ops.n_v}, got shape {x.shape}")
    return float(np.sqrt(x @ (ops.M * x)))


def minv_norm(ops, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (ops.n_v,):
        raise ValueError(f"expected vector of length {ops.n_v}, got shape {x.shape}")
    return float(np.sqrt(x @ (x / ops.M)))
