"""
Elliptic Solves

The shifted Helmholtz problems behind the compensator and the observer:

    Neumann data:  (A_h - theta) zeta = -B_h g     (Delta zeta = theta zeta, d zeta/d nu = g on Gamma1)
    Source:        (A_h - theta) xi   = f          (homogeneous flux on Gamma1)

theta = -alpha - mu in every controller use; theta = 0 gives the Neumann map.
A HelmholtzConfig holds the sparse LU factorization of K_h - theta*W, so every
solve is a pair of triangular solves against a shared immutable factor.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from heatstab.errors import NumericalFailure, ResonanceError
from heatstab.grid import DiscreteOperator, Grid, check_field, check_trace, trace_gamma1
from heatstab.spectral import EigenBasis

logger = logging.getLogger(__name__)

EPS_RES_FACTOR = 1e-6


@dataclass(frozen=True, eq=False)
class HelmholtzConfig:
    """
    A resonance-checked shift with its factorization.

    Attributes:
        theta: the shift
        resonance_margin: min_j |theta - lambda_j| over the computed modes (inf without a basis)
        nearest_mode: 1-based j attaining the margin, or None
        eps_res: the refusal threshold that was applied
    """

    theta: float
    resonance_margin: float
    nearest_mode: Optional[int]
    eps_res: float
    factor: object
    weights: np.ndarray

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Returns x with (A_h - theta) x = rhs; rhs may hold several columns."""
        rhs = np.asarray(rhs, dtype=float)
        scaled = self.weights[:, None] * rhs if rhs.ndim == 2 else self.weights * rhs
        x = self.factor.solve(np.ascontiguousarray(scaled))
        if not np.all(np.isfinite(x)):
            raise NumericalFailure(f"Helmholtz solve at theta={self.theta:.6g} produced non-finite values")
        return x

    def solve_transposed(self, rhs: np.ndarray) -> np.ndarray:
        """Returns y with (K_h - theta W)^T y = rhs."""
        return self.factor.solve(np.ascontiguousarray(np.asarray(rhs, dtype=float)), trans="T")


@dataclass(frozen=True, eq=False)
class ResolventReport:
    residual: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    max_residual: float
    relative: float
    condition: float


def helmholtz_config(
    op: DiscreteOperator,
    basis: Optional[EigenBasis],
    theta: float,
    eps_res: Optional[float] = None,
) -> HelmholtzConfig:
    """
    Validates the shift against the computed spectrum and factors K_h - theta W.

    Args:
        op: assembled operators
        basis: computed eigenpairs for the resonance guard (None skips the guard)
        theta: the shift
        eps_res: refusal margin; defaults to 1e-6*|lambda_1|

    Raises:
        ResonanceError: |theta - lambda_j| <= eps_res for some computed j
        NumericalFailure: the shifted matrix is singular
    """
    theta = float(theta)
    margin = float("inf")
    nearest = None
    if basis is not None:
        if eps_res is None:
            eps_res = EPS_RES_FACTOR * abs(basis.lambdas[0])
        distance = np.abs(theta - basis.lambdas)
        j = int(np.argmin(distance))
        margin = float(distance[j])
        nearest = j + 1
        if margin <= eps_res:
            raise ResonanceError(nearest, theta, margin)
        if margin <= 1e3 * eps_res:
            logger.warning("theta=%.6g is close to lambda_%d (margin %.3e)", theta, nearest, margin)
    if eps_res is None:
        eps_res = 0.0

    weights = op.grid.omega_weights
    shifted = (op.K_h - theta * sp.diags(weights)).tocsc()
    try:
        factor = splu(shifted)
    except RuntimeError as exc:
        raise NumericalFailure(f"K - theta W is singular at theta={theta:.6g}: {exc}") from exc

    return HelmholtzConfig(
        theta=theta,
        resonance_margin=margin,
        nearest_mode=nearest,
        eps_res=float(eps_res),
        factor=factor,
        weights=np.asarray(weights),
    )


def solve_neumann_data(op: DiscreteOperator, grid: Grid, cfg: HelmholtzConfig, g: np.ndarray) -> np.ndarray:
    """
    Solves Delta zeta = theta zeta with flux g on Gamma1 and zero on Gamma0.

    g may be a TraceField or an (nx, k) block of them. S g = -zeta_g.
    """
    g = check_trace(g, grid, "g")
    return cfg.solve(-(op.B_h @ g))


def solve_source(op: DiscreteOperator, grid: Grid, cfg: HelmholtzConfig, f: np.ndarray) -> np.ndarray:
    """Solves (A_h - theta) xi = f with homogeneous flux; S* f = trace(xi_f)."""
    f = check_field(f, grid, "f")
    return cfg.solve(f)


def neumann_map(op: DiscreteOperator, grid: Grid, g: np.ndarray) -> np.ndarray:
    """Harmonic extension of Neumann data g (the theta = 0 case)."""
    cfg = helmholtz_config(op, None, 0.0)
    return solve_neumann_data(op, grid, cfg, g)


def sylvester_operator(op: DiscreteOperator, grid: Grid, cfg: HelmholtzConfig) -> np.ndarray:
    """Dense S = (A_h - theta)^-1 B_h, columnwise S e_k = -zeta_(e_k)."""
    return -solve_neumann_data(op, grid, cfg, np.eye(grid.nx))


def adjoint_sylvester_operator(op: DiscreteOperator, grid: Grid, cfg: HelmholtzConfig) -> np.ndarray:
    """
    Dense S* = T (A_h - theta)^-1, so that S* f = trace(xi_f).

    Built from transposed solves: (S*)^T = W (K - theta W)^-T E.
    """
    E = np.zeros((grid.size, grid.nx))
    E[np.asarray(grid.gamma1_nodes), np.arange(grid.nx)] = 1.0
    Y = cfg.solve_transposed(E)
    return (grid.omega_weights[:, None] * Y).T


def sylvester_residual(op: DiscreteOperator, cfg: HelmholtzConfig, S: np.ndarray) -> float:
    """
    Largest relative column residual of (A_h + (mu+alpha)) S - B_h.

    With theta = -alpha-mu this is (A_h - theta) S - B_h.
    """
    B = op.B_h.toarray()
    R = op.A_h @ S - cfg.theta * S - B
    w = op.grid.omega_weights[:, None]
    col_res = np.sqrt(np.sum(w * R**2, axis=0))
    col_ref = np.sqrt(np.sum(w * B**2, axis=0))
    return float(np.max(col_res / col_ref))


def verify_resolvent_identity(
    basis: EigenBasis,
    cfg: HelmholtzConfig,
    op: DiscreteOperator,
    grid: Grid,
    n_check: Optional[int] = None,
) -> ResolventReport:
    """
    Compares <zeta_i, phi_j>_Omega with <phi_i, phi_j>_Gamma1 / (theta - lambda_j).

    zeta_i is the Neumann-data solve with g = trace(phi_i).

    Returns:
        ResolventReport with the residual matrix, its max entry relative to the
        largest predicted entry, and a condition estimate ||A_h - theta|| / margin
    """
    if n_check is None:
        n_check = min(basis.n_computed, 6)
    n_check = min(int(n_check), basis.n_computed)
    phis = basis.phis[:, :n_check]
    lambdas = basis.lambdas[:n_check]

    traces = phis[np.asarray(grid.gamma1_nodes)]
    zetas = solve_neumann_data(op, grid, cfg, traces)
    lhs = zetas.T @ (grid.omega_weights[:, None] * phis)
    gram = traces.T @ (grid.gamma1_weights[:, None] * traces)
    rhs = gram / (cfg.theta - lambdas)[None, :]

    residual = lhs - rhs
    max_residual = float(np.max(np.abs(residual)))
    scale = float(np.max(np.abs(rhs)))
    relative = max_residual / scale if scale > 0 else max_residual

    # Gershgorin bound on |lambda_max(A_h)|
    op_norm = float(abs(op.A_h).sum(axis=1).max())
    margin = float(np.min(np.abs(cfg.theta - basis.lambdas)))
    condition = (op_norm + abs(cfg.theta)) / margin

    return ResolventReport(
        residual=residual,
        lhs=lhs,
        rhs=rhs,
        max_residual=max_residual,
        relative=relative,
        condition=condition,
    )


def trace_of_source(op: DiscreteOperator, grid: Grid, cfg: HelmholtzConfig, f: np.ndarray) -> np.ndarray:
    return trace_gamma1(solve_source(op, grid, cfg, f), grid)
