"""
Grid and Discrete Operators

Discretizes the rectangle [0, Lx] x [0, Ly] with the control boundary Gamma1 on
the top edge {y = Ly}. Two boundary configurations are supported:

    A: Dirichlet on the left, right and bottom edges (Gamma0 = three sides).
    B: Dirichlet on the lateral edges, homogeneous Neumann on the bottom.

Unknowns sit at x_i = i*hx (i = 1..nx) and y_j = j*hy (j = 1..ny), stored
row-major with x fastest: index = (j-1)*nx + (i-1). Neumann edges are closed
with the second-order one-sided flux relation

    u_b = (4*u_n - u_(n-1) + 2*h*g) / 3,

which leaves the adjacent row with stencil (2/3)(u_(n-1) - u_n)/h^2. Giving
that row a 1.5*h quadrature weight makes W*A symmetric, so A is self-adjoint
in the weighted inner product.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from heatstab.errors import DimensionError, GridError

BOUNDARY_CONFIGS = ("A", "B")


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform node grid with quadrature weights for Omega and Gamma1."""

    nx: int
    ny: int
    Lx: float
    Ly: float
    hx: float
    hy: float
    boundary_config: str
    gamma1_nodes: np.ndarray
    omega_weights: np.ndarray
    gamma1_weights: np.ndarray

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def bottom_neumann(self) -> bool:
        return self.boundary_config == "B"


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """
    Discrete Laplacian and Neumann boundary injection.

    Attributes:
        A_h: W^-1 K, the Laplacian with Dirichlet on Gamma0 and Neumann on Gamma1
        K_h: symmetric stiffness matrix (W * A_h), negative definite
        B_h: maps a TraceField of boundary flux to a Field load
    """

    A_h: sp.csr_matrix
    K_h: sp.csr_matrix
    B_h: sp.csr_matrix
    grid: Grid


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values)
    values.setflags(write=False)
    return values


def build_grid(nx: int, ny: int, Lx: float = 1.0, Ly: float = 1.0, boundary_config: str = "A") -> Grid:
    """
    Builds the node grid.

    Args:
        nx, ny: interior node counts per axis (>= 2)
        Lx, Ly: side lengths (> 0)
        boundary_config: "A" or "B"

    Returns:
        Grid with trapezoidal Gamma1 weights and product Omega weights
    """
    if int(nx) != nx or int(ny) != ny:
        raise GridError(f"node counts must be integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    if nx < 2 or ny < 2:
        raise GridError(f"degenerate grid: nx={nx}, ny={ny} (need at least 2 nodes per axis)")
    if not (Lx > 0 and Ly > 0):
        raise GridError(f"side lengths must be positive, got Lx={Lx}, Ly={Ly}")
    boundary_config = str(boundary_config).upper()
    if boundary_config not in BOUNDARY_CONFIGS:
        raise GridError(f"unknown boundary configuration '{boundary_config}' (expected A or B)")

    hx = Lx / (nx + 1)
    hy = Ly / (ny + 1)

    wx = np.full(nx, hx)
    wy = _neumann_row_weights(ny, hy, boundary_config == "B")
    omega_weights = np.kron(wy, wx)

    # corners at x=0 and x=Lx are Dirichlet, so the trapezoid endpoints carry zero
    gamma1_weights = np.full(nx, hx)
    gamma1_nodes = np.arange((ny - 1) * nx, ny * nx)

    return Grid(
        nx=nx,
        ny=ny,
        Lx=float(Lx),
        Ly=float(Ly),
        hx=hx,
        hy=hy,
        boundary_config=boundary_config,
        gamma1_nodes=_frozen(gamma1_nodes),
        omega_weights=_frozen(omega_weights),
        gamma1_weights=_frozen(gamma1_weights),
    )


def _neumann_row_weights(ny: int, hy: float, bottom_neumann: bool) -> np.ndarray:
    wy = np.full(ny, hy)
    wy[-1] = 1.5 * hy
    if bottom_neumann:
        wy[0] = 1.5 * hy
    return wy


def _dirichlet_stiffness_1d(n: int, h: float) -> sp.csr_matrix:
    """h * D2 for the Dirichlet second difference; symmetric."""
    main = np.full(n, -2.0 / h)
    off = np.full(n - 1, 1.0 / h)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _neumann_stiffness_1d(n: int, h: float, bottom_neumann: bool) -> sp.csr_matrix:
    """Weighted y-stiffness with the eliminated Neumann node(s) folded in."""
    main = np.full(n, -2.0 / h)
    main[-1] = -1.0 / h
    if bottom_neumann:
        main[0] = -1.0 / h
    off = np.full(n - 1, 1.0 / h)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def assemble_operators(grid: Grid) -> DiscreteOperator:
    """
    Assembles A_h, K_h and B_h for a grid.

    K_h = kron(Wy, Kx) + kron(Ky, Wx) is symmetric by construction; A_h = W^-1 K_h.
    B_h = W^-1 E Gm where E scatters a trace onto the Gamma1-adjacent row, so
    its entries equal the elimination's flux load 2/(3*hy).
    """
    nx, ny = grid.nx, grid.ny
    wx = sp.diags(np.full(nx, grid.hx))
    wy = sp.diags(_neumann_row_weights(ny, grid.hy, grid.bottom_neumann))
    kx = _dirichlet_stiffness_1d(nx, grid.hx)
    ky = _neumann_stiffness_1d(ny, grid.hy, grid.bottom_neumann)

    K = (sp.kron(wy, kx) + sp.kron(ky, wx)).tocsr()
    inv_w = sp.diags(1.0 / grid.omega_weights)
    A = (inv_w @ K).tocsr()

    rows = np.asarray(grid.gamma1_nodes)
    cols = np.arange(nx)
    vals = grid.gamma1_weights / grid.omega_weights[rows]
    B = sp.csr_matrix((vals, (rows, cols)), shape=(grid.size, nx))

    return DiscreteOperator(A_h=A, K_h=K, B_h=B, grid=grid)


def node_coordinates(grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (x, y) coordinates of every unknown, in Field order."""
    x = grid.hx * np.arange(1, grid.nx + 1)
    y = grid.hy * np.arange(1, grid.ny + 1)
    xx, yy = np.meshgrid(x, y)
    return xx.ravel(), yy.ravel()


def gamma1_coordinates(grid: Grid) -> np.ndarray:
    return grid.hx * np.arange(1, grid.nx + 1)


def check_field(values, grid: Grid, name: str = "field") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.size:
        raise DimensionError(f"{name} has length {values.shape[0]}, expected nx*ny={grid.size}")
    return values


def check_trace(values, grid: Grid, name: str = "trace") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.nx:
        raise DimensionError(f"{name} has length {values.shape[0]}, expected nx={grid.nx}")
    return values


def inner_product_omega(a, b, grid: Grid) -> float:
    """Weighted sum over nodes: sum_i w_i a_i b_i."""
    a = check_field(a, grid, "a")
    b = check_field(b, grid, "b")
    return float(np.dot(grid.omega_weights * a, b))


def inner_product_gamma1(a, b, grid: Grid) -> float:
    a = check_trace(a, grid, "a")
    b = check_trace(b, grid, "b")
    return float(np.dot(grid.gamma1_weights * a, b))


def norm_omega(a, grid: Grid) -> float:
    return float(np.sqrt(max(inner_product_omega(a, a, grid), 0.0)))


def norm_gamma1(a, grid: Grid) -> float:
    return float(np.sqrt(max(inner_product_gamma1(a, a, grid), 0.0)))


def trace_gamma1(f, grid: Grid) -> np.ndarray:
    """
    Restriction of a Field (or the columns of a Field matrix) to Gamma1.

    Returns the Gamma1-adjacent node values. For a field with homogeneous flux
    this is the reconstructed boundary value up to O(h^2), and it is the exact
    discrete adjoint of B_h in the weighted inner products.
    """
    f = check_field(f, grid, "f")
    return f[grid.gamma1_nodes].copy()


def trace_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse selection matrix T with T @ f == trace_gamma1(f)."""
    rows = np.arange(grid.nx)
    cols = np.asarray(grid.gamma1_nodes)
    return sp.csr_matrix((np.ones(grid.nx), (rows, cols)), shape=(grid.nx, grid.size))
