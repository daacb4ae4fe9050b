"""Uniform grid on (-1, 1), finite-difference operators and banded solves.

Fields are plain ``numpy`` arrays holding nodal values at all ``n_cells + 1``
nodes, boundary nodes included. Operators act on full fields (so boundary
values enter through ghost elimination) and expose the interior block as a
banded matrix for implicit solves, which always assume homogeneous boundary
values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg.lapack import dgbtrf, dgbtrs

MIN_CELLS = 8
PIVOT_TOL = 1e-14


class ResolutionError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


class IncompatibleBCError(ValueError):
    pass


class LinearSolveError(RuntimeError):
    pass


class BcScheme(enum.Enum):
    """Homogeneous boundary condition families used by the four models."""

    DIRICHLET_PAIR = "dirichlet_pair"  # u(+-1) = 0
    SIMPLY_SUPPORTED = "simply_supported"  # u(+-1) = u_xx(+-1) = 0
    KDV_MIXED = "kdv_mixed"  # u(-1) = u(1) = u_x(1) = 0

    @property
    def n_conditions(self) -> int:
        return {"dirichlet_pair": 2, "simply_supported": 4, "kdv_mixed": 3}[self.value]


@dataclass(frozen=True)
class Grid:
    n_cells: int
    h: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < MIN_CELLS:
            raise ResolutionError(
                f"n_cells must be an integer >= {MIN_CELLS}, got {self.n_cells!r}"
            )
        n = int(self.n_cells)
        object.__setattr__(self, "n_cells", n)
        object.__setattr__(self, "h", 2.0 / n)
        x = -1.0 + np.arange(n + 1) * (2.0 / n)
        x[-1] = 1.0
        x.flags.writeable = False
        object.__setattr__(self, "nodes", x)

    @property
    def size(self) -> int:
        return self.n_cells + 1

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]


def make_grid(n_cells: int) -> Grid:
    return Grid(n_cells)


def check_field(grid: Grid, values) -> np.ndarray:
    u = np.asarray(values, dtype=float)
    if u.ndim != 1 or u.size != grid.size:
        raise GridMismatchError(
            f"field has {u.size} values, grid expects {grid.size}"
        )
    return u


# Stencil weights on full-node columns for each interior row i = 1..N-1.
# Each entry is (row, column, weight) with columns possibly outside 0..N
# before ghost elimination.

def _central_rows(n: int, offsets, weights):
    rows, cols, vals = [], [], []
    for i in range(1, n):
        for o, w in zip(offsets, weights):
            rows.append(i - 1)
            cols.append(i + o)
            vals.append(w)
    return rows, cols, vals


def _eliminate_ghosts(n: int, rows, cols, vals, bc: BcScheme, order: int):
    """Rewrite ghost columns (-1 and N+1) in terms of real nodes."""
    out = ([], [], [])

    def emit(r, c, v):
        out[0].append(r)
        out[1].append(c)
        out[2].append(v)

    for r, c, v in zip(rows, cols, vals):
        if 0 <= c <= n:
            emit(r, c, v)
        elif c == -1 and bc is BcScheme.SIMPLY_SUPPORTED:
            # u_xx(-1) = 0  =>  u_{-1} = 2 u_0 - u_1
            emit(r, 0, 2 * v)
            emit(r, 1, -v)
        elif c == n + 1 and bc is BcScheme.SIMPLY_SUPPORTED:
            emit(r, n, 2 * v)
            emit(r, n - 1, -v)
        elif c == n + 1 and bc is BcScheme.KDV_MIXED:
            # u_x(1) = 0  =>  u_{N+1} = u_{N-1}
            emit(r, n - 1, v)
        else:
            raise IncompatibleBCError(
                f"order-{order} stencil needs a ghost at column {c} "
                f"which {bc.name} does not provide"
            )
    return out


_COMPATIBLE = {
    1: set(BcScheme),
    2: set(BcScheme),
    3: {BcScheme.KDV_MIXED},
    4: {BcScheme.SIMPLY_SUPPORTED},
}


def _stencil_matrix(grid: Grid, order: int, bc: BcScheme) -> sp.csr_matrix:
    n, h = grid.n_cells, grid.h
    if order == 1:
        rows, cols, vals = _central_rows(n, (-1, 1), (-0.5 / h, 0.5 / h))
    elif order == 2:
        rows, cols, vals = _central_rows(n, (-1, 0, 1), np.array([1.0, -2.0, 1.0]) / h**2)
    elif order == 3:
        w = np.array([-1.0, 2.0, 0.0, -2.0, 1.0]) / (2 * h**3)
        rows, cols, vals = _central_rows(n, (-2, -1, 0, 1, 2), w)
        # only u(-1) = 0 is known at the left end: replace the node-1 row by
        # the one-sided third difference over nodes 0..3
        keep = [k for k, r in enumerate(rows) if r != 0]
        rows = [rows[k] for k in keep]
        cols = [cols[k] for k in keep]
        vals = [vals[k] for k in keep]
        for c, wt in zip((0, 1, 2, 3), (-1.0, 3.0, -3.0, 1.0)):
            rows.append(0)
            cols.append(c)
            vals.append(wt / h**3)
    elif order == 4:
        rows, cols, vals = _central_rows(
            n, (-2, -1, 0, 1, 2), np.array([1.0, -4.0, 6.0, -4.0, 1.0]) / h**4
        )
    else:
        raise ValueError(f"derivative order must be 1..4, got {order}")
    rows, cols, vals = _eliminate_ghosts(n, rows, cols, vals, bc, order)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n - 1, n + 1))


@dataclass(frozen=True, eq=False)
class BandedOperator:
    """Linear map from full nodal fields to interior values.

    ``full`` has shape ``(N-1, N+1)``; its columns ``1..N-1`` form the square
    interior block used for implicit solves. Operators can be combined
    linearly (``-d4 - lam * d2``); the result keeps the union bandwidth.
    """

    grid: Grid
    bc: BcScheme
    full: sp.csr_matrix
    order: int

    @property
    def interior(self) -> sp.csr_matrix:
        return self.full[:, 1:-1].tocsr()

    @property
    def bandwidths(self) -> tuple[int, int]:
        a = self.interior.tocoo()
        if a.nnz == 0:
            return 0, 0
        d = a.col - a.row
        return int(max(0, -d.min())), int(max(0, d.max()))

    @property
    def lower_bandwidth(self) -> int:
        return self.bandwidths[0]

    @property
    def upper_bandwidth(self) -> int:
        return self.bandwidths[1]

    def dense(self) -> np.ndarray:
        return self.interior.toarray()

    def __call__(self, u) -> np.ndarray:
        return apply_operator(self, u)

    def _combine(self, other: "BandedOperator", sign: float) -> "BandedOperator":
        if other.grid != self.grid:
            raise GridMismatchError("operators live on different grids")
        if other.bc is not self.bc:
            raise IncompatibleBCError("operators carry different boundary schemes")
        return BandedOperator(
            self.grid, self.bc, (self.full + sign * other.full).tocsr(),
            max(self.order, other.order),
        )

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, c: float) -> "BandedOperator":
        return BandedOperator(self.grid, self.bc, (float(c) * self.full).tocsr(), self.order)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def diff_operator(grid: Grid, order: int, bc: BcScheme) -> BandedOperator:
    if order not in _COMPATIBLE:
        raise ValueError(f"derivative order must be 1..4, got {order}")
    if bc not in _COMPATIBLE[order]:
        raise IncompatibleBCError(f"order {order} is not supported with {bc.name}")
    return BandedOperator(grid, bc, _stencil_matrix(grid, order, bc), order)


def zero_operator(grid: Grid, bc: BcScheme) -> BandedOperator:
    n = grid.n_cells
    return BandedOperator(grid, bc, sp.csr_matrix((n - 1, n + 1)), 0)


def identity_operator(grid: Grid, bc: BcScheme) -> BandedOperator:
    n = grid.n_cells
    full = sp.eye(n - 1, n + 1, k=1, format="csr")
    return BandedOperator(grid, bc, full, 0)


def apply_operator(op: BandedOperator, u) -> np.ndarray:
    """Derivative samples at interior nodes; boundary entries are 0."""
    u = check_field(op.grid, u)
    out = np.zeros_like(u)
    out[1:-1] = op.full @ u
    return out


def _to_lapack_band(a: sp.spmatrix, kl: int, ku: int) -> np.ndarray:
    # dgbtrf wants kl extra rows on top for fill-in
    n = a.shape[0]
    ab = np.zeros((2 * kl + ku + 1, n))
    coo = a.tocoo()
    ab[kl + ku + coo.row - coo.col, coo.col] = coo.data
    return ab


class BandedLU:
    """LU factorization of ``I - c * A`` with in-band partial pivoting.

    ``A`` is the interior block of ``op``. Backed by LAPACK ``gbtrf``/``gbtrs``.
    """

    def __init__(self, op: BandedOperator, c: float):
        a = sp.identity(op.grid.n_cells - 1, format="csr") - c * op.interior
        kl, ku = op.bandwidths
        self.kl, self.ku, self.c = kl, ku, c
        self.n = a.shape[0]
        lu, piv, info = dgbtrf(_to_lapack_band(a, kl, ku), kl, ku)
        if info > 0:
            raise LinearSolveError(f"exactly singular pivot at row {info - 1}")
        diag = np.abs(lu[kl + ku, :])
        if diag.min() < PIVOT_TOL:
            raise LinearSolveError(
                f"pivot {diag.min():.3e} below {PIVOT_TOL:g} (c={c:.3e})"
            )
        self._lu, self._piv = lu, piv

    def solve(self, rhs_interior: np.ndarray) -> np.ndarray:
        x, info = dgbtrs(self._lu, self.kl, self.ku, rhs_interior, self._piv)
        if info != 0:
            raise LinearSolveError(f"gbtrs failed with info={info}")
        return x


def solve_banded(op: BandedOperator, dt: float, rhs) -> np.ndarray:
    """Solve ``(I - dt * L) u = rhs`` on interior nodes, boundary values 0."""
    rhs = check_field(op.grid, rhs)
    if dt < 0:
        raise ValueError("dt must be non-negative")
    out = np.zeros_like(rhs)
    if dt == 0:
        out[1:-1] = rhs[1:-1]
        return out
    out[1:-1] = BandedLU(op, dt).solve(rhs[1:-1])
    return out


def quad_trapz(grid: Grid, values) -> float:
    v = check_field(grid, values)
    return float(grid.h * (v.sum() - 0.5 * (v[0] + v[-1])))


# One-sided second-order derivative weights at x = -1 over nodes 0..k+1
# (mirrored with sign (-1)^k at x = +1). Used where a boundary derivative
# value is needed for integrals or fluxes.
_ONE_SIDED = {
    1: np.array([-1.5, 2.0, -0.5]),
    2: np.array([2.0, -5.0, 4.0, -1.0]),
    3: np.array([-2.5, 9.0, -12.0, 7.0, -1.5]),
}


def boundary_derivative(grid: Grid, u, k: int) -> tuple[float, float]:
    """Second-order one-sided k-th derivative at (x=-1, x=1)."""
    u = check_field(grid, u)
    w = _ONE_SIDED[k]
    m = w.size
    left = float(w @ u[:m]) / grid.h**k
    right = (-1) ** k * float(w @ u[::-1][:m]) / grid.h**k
    return left, right


def derivative_field(grid: Grid, u, k: int, bc: BcScheme) -> np.ndarray:
    """k-th discrete derivative at all nodes (interior stencil + one-sided ends)."""
    d = apply_operator(diff_operator(grid, k, bc), u)
    d[0], d[-1] = boundary_derivative(grid, u, k)
    return d
