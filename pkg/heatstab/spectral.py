"""
Spectral Module

Ordered eigenpairs of A_h, selection of the unstable count N for a given mu,
and the Gamma1 Gram certificates for every eigenvalue cluster.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from heatstab.errors import ConfigError, EigensolverError, InsufficientModesError
from heatstab.grid import DiscreteOperator, Grid

logger = logging.getLogger(__name__)

DENSE_LIMIT = 4096
CLUSTER_TOL_FACTOR = 1e-6
SING_TOL = 1e-10
# anything above this is a broken solve, not rounding
RESIDUAL_FAILURE = 1e-6


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """
    Leading eigenpairs of A_h.

    Attributes:
        lambdas: eigenvalues, non-increasing, all negative
        phis: (nx*ny, count) array; column j-1 is phi_j, orthonormal in the Omega product
        clusters: 0-based index groups of numerically equal eigenvalues
        residuals: relative residuals ||A phi - lambda phi|| / (|lambda| ||phi||)
    """

    lambdas: np.ndarray
    phis: np.ndarray
    clusters: Tuple[Tuple[int, ...], ...]
    cluster_tol: float
    residuals: np.ndarray
    method: str

    @property
    def n_computed(self) -> int:
        return int(self.lambdas.shape[0])

    def phi(self, j: int) -> np.ndarray:
        """Eigenfunction phi_j, 1-based."""
        return self.phis[:, j - 1]


@dataclass(frozen=True)
class UnstableSelection:
    N: int
    mu: float
    margin: float


@dataclass(frozen=True, eq=False)
class GramReport:
    """Gamma1 Gram matrix of one cluster's traces with its invertibility certificate."""

    indices: Tuple[int, ...]
    matrix: np.ndarray
    min_singular: float
    sing_tol: float

    @property
    def near_singular(self) -> bool:
        return self.min_singular < self.sing_tol


def degenerate_clusters(lambdas: Sequence[float], cluster_tol: float) -> List[Tuple[int, ...]]:
    """Groups consecutive sorted eigenvalues closer than cluster_tol."""
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size == 0:
        return []
    groups = [[0]]
    for i in range(1, lambdas.size):
        if abs(lambdas[i] - lambdas[i - 1]) <= cluster_tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return [tuple(g) for g in groups]


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    # first component within rounding of the maximum magnitude is made positive
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        mag = np.abs(col)
        first = int(np.argmax(mag >= mag.max() * (1.0 - 1e-8)))
        if col[first] < 0:
            vectors[:, j] = -col
    return vectors


def compute_eigenbasis(
    op: DiscreteOperator,
    grid: Grid,
    count: int,
    method: str = "auto",
    cluster_tol: Optional[float] = None,
    dense_limit: int = DENSE_LIMIT,
    maxiter: Optional[int] = None,
) -> EigenBasis:
    """
    Computes the first `count` eigenpairs of A_h in non-increasing order.

    The symmetric form W^-1/2 K W^-1/2 is diagonalized either densely or by
    shift-invert Lanczos about zero (A_h is negative definite, so the
    eigenvalues nearest zero are the largest).

    Args:
        op: assembled operators
        grid: the grid they were assembled on
        count: number of eigenpairs (1 <= count <= nx*ny)
        method: "dense", "shift-invert" or "auto" (dense up to dense_limit unknowns)
        cluster_tol: grouping tolerance; defaults to 1e-6*|lambda_1|

    Returns:
        EigenBasis with W-orthonormal, sign-normalized eigenfunctions
    """
    n = grid.size
    if int(count) != count or not 1 <= count <= n:
        raise ConfigError(f"modes must be between 1 and nx*ny={n}, got {count}")
    count = int(count)
    if method == "auto":
        method = "dense" if n <= dense_limit else "shift-invert"
    if method == "shift-invert" and count >= n - 1:
        logger.debug("shift-invert needs count < n-1; falling back to dense")
        method = "dense"
    if method not in ("dense", "shift-invert"):
        raise ConfigError(f"unknown eigensolver method '{method}'")

    scale = 1.0 / np.sqrt(grid.omega_weights)
    D = sp.diags(scale)
    S = (D @ op.K_h @ D).tocsr()
    S = 0.5 * (S + S.T)

    if method == "dense":
        try:
            values, vectors = la.eigh(S.toarray(), subset_by_index=[n - count, n - 1])
        except la.LinAlgError as exc:
            raise EigensolverError(f"dense eigensolver failed: {exc}") from exc
    else:
        try:
            values, vectors = eigsh(S.tocsc(), k=count, sigma=0.0, which="LM", maxiter=maxiter)
        except ArpackNoConvergence as exc:
            raise EigensolverError(
                "shift-invert eigensolver did not converge",
                iterations=maxiter,
                converged=len(exc.eigenvalues),
            ) from exc
        except ArpackError as exc:
            raise EigensolverError(f"shift-invert eigensolver failed: {exc}") from exc

    order = np.argsort(values)[::-1]
    lambdas = np.asarray(values[order], dtype=float)
    vectors = np.asarray(vectors[:, order], dtype=float)

    if lambdas[0] >= 0:
        raise EigensolverError(f"non-negative eigenvalue {lambdas[0]:.6g}; operator is not negative definite")

    if cluster_tol is None:
        cluster_tol = CLUSTER_TOL_FACTOR * abs(lambdas[0])
    clusters = degenerate_clusters(lambdas, cluster_tol)
    for group in clusters:
        if len(group) > 1:
            idx = list(group)
            q, _ = np.linalg.qr(vectors[:, idx])
            vectors[:, idx] = q

    phis = _sign_fix(scale[:, None] * vectors)

    resid = op.A_h @ phis - phis * lambdas
    w = grid.omega_weights[:, None]
    res_norm = np.sqrt(np.sum(w * resid**2, axis=0))
    phi_norm = np.sqrt(np.sum(w * phis**2, axis=0))
    residuals = res_norm / (np.abs(lambdas) * phi_norm)
    worst = float(residuals.max())
    if worst > RESIDUAL_FAILURE:
        raise EigensolverError(f"eigenpair residual {worst:.3e} exceeds {RESIDUAL_FAILURE:g}")

    logger.debug("computed %d eigenpairs by %s, max residual %.2e", count, method, worst)
    phis.setflags(write=False)
    lambdas.setflags(write=False)
    return EigenBasis(
        lambdas=lambdas,
        phis=phis,
        clusters=tuple(clusters),
        cluster_tol=float(cluster_tol),
        residuals=residuals,
        method=method,
    )


def select_unstable_count(basis: EigenBasis, mu: float) -> UnstableSelection:
    """
    Finds N with lambda_N + mu >= 0 and lambda_(N+1) + mu < 0.

    Ties at exactly zero count as unstable. Raises InsufficientModesError when
    the last computed mode is not yet stable.
    """
    shifted = basis.lambdas + mu
    if shifted[-1] >= 0:
        raise InsufficientModesError(basis.n_computed, float(shifted[-1]))
    N = int(np.count_nonzero(shifted >= 0))
    return UnstableSelection(N=N, mu=float(mu), margin=float(shifted[N]))


def gram_trace_matrix(basis: EigenBasis, group: Sequence[int], grid: Grid, sing_tol: float = SING_TOL) -> GramReport:
    """
    Gamma1 Gram matrix of the traces of phi_j, j in group (0-based).

    A smallest singular value below sing_tol means the traces are numerically
    dependent; it is logged as a warning and reported, not raised.
    """
    group = tuple(int(i) for i in group)
    traces = basis.phis[np.asarray(grid.gamma1_nodes)][:, list(group)]
    weighted = np.sqrt(grid.gamma1_weights)[:, None] * traces
    G = weighted.T @ weighted
    G = 0.5 * (G + G.T)
    smin = float(np.linalg.svd(G, compute_uv=False).min())
    if smin < sing_tol:
        logger.warning(
            "Gamma1 trace Gram matrix of modes %s is near singular (sigma_min=%.3e < %.1e)",
            ", ".join(str(i + 1) for i in group),
            smin,
            sing_tol,
        )
    return GramReport(indices=group, matrix=G, min_singular=smin, sing_tol=sing_tol)


def trace_gram_report(basis: EigenBasis, grid: Grid, sing_tol: float = SING_TOL) -> List[GramReport]:
    return [gram_trace_matrix(basis, group, grid, sing_tol) for group in basis.clusters]


def analytic_eigenvalues(grid: Grid, count: int) -> np.ndarray:
    """
    Separation-of-variables eigenvalues of the continuous problem.

    Config A: -pi^2 (m^2/Lx^2 + (k+1/2)^2/Ly^2), profile sin(m pi x/Lx) sin((k+1/2) pi y/Ly)
    Config B: -pi^2 (m^2/Lx^2 + k^2/Ly^2),        profile sin(m pi x/Lx) cos(k pi y/Ly)
    """
    m = np.arange(1, count + 1)[:, None]
    k = np.arange(0, count)[None, :]
    ky = k + 0.5 if grid.boundary_config == "A" else k
    values = -np.pi**2 * (m**2 / grid.Lx**2 + ky**2 / grid.Ly**2)
    return np.sort(values.ravel())[::-1][:count]


def suggest_alpha(basis: EigenBasis, mu: float) -> Optional[float]:
    """
    Midpoint of the largest gap between the resonant values -lambda_j - mu > 0.

    Returns None if no computed mode is stable under mu.
    """
    points = np.sort(-basis.lambdas - mu)
    points = points[points > 0]
    if points.size == 0:
        return None
    edges = np.concatenate(([0.0], points))
    gaps = np.diff(edges)
    i = int(np.argmax(gaps))
    return float(0.5 * (edges[i] + edges[i + 1]))
