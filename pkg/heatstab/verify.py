"""
Identity Suite

Evaluates every discrete identity the construction relies on and returns one
IdentityCheck per identity, each with its residual and tolerance. Nothing here
raises on a failed identity; the caller decides what a failure means.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as sparse_norm

from heatstab.elliptic import solve_neumann_data, solve_source, sylvester_residual, verify_resolvent_identity
from heatstab.grid import DiscreteOperator, Grid, trace_matrix
from heatstab.spectral import EigenBasis, UnstableSelection, trace_gram_report
from heatstab.synthesis import (
    SynthesisResult,
    adjoint_residual,
    closed_loop_spectrum_prediction,
    spectral_abscissa,
    verify_similarity,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tolerances:
    exact: float = 1e-12
    eigen_residual: float = 1e-9
    orthonormality: float = 1e-10
    identity: float = 1e-9
    sylvester: float = 1e-10
    similarity: float = 1e-8
    spectrum: float = 1e-7
    abscissa: float = 1e-6
    sing_tol: float = 1e-10


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    residual: float
    tolerance: float
    passed: bool
    detail: str = ""


def _check(name: str, residual: float, tolerance: float, detail: str = "") -> IdentityCheck:
    residual = float(residual)
    return IdentityCheck(name=name, residual=residual, tolerance=tolerance, passed=bool(residual <= tolerance), detail=detail)


def self_adjointness_residual(op: DiscreteOperator) -> float:
    K = sp.diags(op.grid.omega_weights) @ op.A_h
    return float(sparse_norm(K - K.T) / sparse_norm(K))


def boundary_duality_residual(op: DiscreteOperator, grid: Grid, pairs: int = 100, seed: int = 0) -> float:
    """max |<B g, f>_Omega - <g, trace f>_Gamma1| / (||B g|| ||f||) over random pairs."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((grid.nx, pairs))
    f = rng.standard_normal((grid.size, pairs))
    w = grid.omega_weights[:, None]
    gm = grid.gamma1_weights[:, None]
    Bg = op.B_h @ g
    Tf = trace_matrix(grid) @ f
    lhs = np.sum(w * Bg * f, axis=0)
    rhs = np.sum(gm * g * Tf, axis=0)
    scale = np.sqrt(np.sum(w * Bg**2, axis=0) * np.sum(w * f**2, axis=0))
    return float(np.max(np.abs(lhs - rhs) / scale))


def orthonormality_residual(basis: EigenBasis, grid: Grid) -> float:
    gram = basis.phis.T @ (grid.omega_weights[:, None] * basis.phis)
    return float(np.max(np.abs(gram - np.eye(basis.n_computed))))


def source_duality_residual(op: DiscreteOperator, grid: Grid, cfg, pairs: int = 100, seed: int = 0) -> float:
    """
    <zeta_g, f>_Omega + <g, trace(xi_f)>_Gamma1 = 0, i.e. <S g, f> = <g, S* f>.
    """
    rng = np.random.default_rng(seed + 1)
    g = rng.standard_normal((grid.nx, pairs))
    f = rng.standard_normal((grid.size, pairs))
    zeta = solve_neumann_data(op, grid, cfg, g)
    xi_trace = solve_source(op, grid, cfg, f)[np.asarray(grid.gamma1_nodes)]
    w = grid.omega_weights[:, None]
    gm = grid.gamma1_weights[:, None]
    lhs = np.sum(w * zeta * f, axis=0)
    rhs = -np.sum(gm * g * xi_trace, axis=0)
    scale = np.sqrt(np.sum(w * zeta**2, axis=0) * np.sum(w * f**2, axis=0))
    return float(np.max(np.abs(lhs - rhs) / scale))


def sbv_residual(result: SynthesisResult, grid: Grid) -> float:
    """S Bv c = -sum_i c_i zeta_i columnwise."""
    lhs = result.S @ result.parts.Bv
    rhs = -result.system.zetas
    w = grid.omega_weights[:, None]
    col = np.sqrt(np.sum(w * (lhs - rhs) ** 2, axis=0))
    ref = np.sqrt(np.sum(w * rhs**2, axis=0))
    return float(np.max(col / ref))


def run_identity_suite(
    op: DiscreteOperator,
    grid: Grid,
    basis: EigenBasis,
    selection: UnstableSelection,
    result: SynthesisResult,
    tolerances: Optional[Tolerances] = None,
    pairs: int = 100,
    seed: int = 0,
) -> List[IdentityCheck]:
    """
    Runs the full suite on a synthesized controller.

    Returns:
        List of IdentityCheck in a fixed order, grid-level checks first
    """
    tol = tolerances or Tolerances()
    cfg = result.cfg
    checks: List[IdentityCheck] = []

    checks.append(_check("operator self-adjointness", self_adjointness_residual(op), tol.exact))
    lam1 = float(basis.lambdas[0])
    checks.append(
        IdentityCheck("negative definiteness", lam1, 0.0, lam1 < 0, detail=f"lambda_1 = {lam1:.8g}")
    )
    checks.append(_check("B/B* duality", boundary_duality_residual(op, grid, pairs, seed), tol.exact))
    checks.append(_check("eigenpair residual", float(np.max(basis.residuals)), tol.eigen_residual))
    checks.append(_check("eigenvector orthonormality", orthonormality_residual(basis, grid), tol.orthonormality))

    for report in trace_gram_report(basis, grid, tol.sing_tol)[: max(selection.N, 1)]:
        modes = ",".join(str(i + 1) for i in report.indices)
        checks.append(
            IdentityCheck(
                f"Gamma1 Gram modes {modes}",
                report.min_singular,
                tol.sing_tol,
                not report.near_singular,
                detail="min singular value must exceed tolerance",
            )
        )

    resolvent = verify_resolvent_identity(basis, cfg, op, grid)
    checks.append(
        _check("resolvent identity", resolvent.relative, tol.identity, detail=f"condition ~ {resolvent.condition:.2e}")
    )
    checks.append(_check("F_N = D_N G_N", result.system.factorization_residual(), tol.identity))
    checks.append(_check("Sylvester residual", sylvester_residual(op, cfg, result.S), tol.sylvester))
    checks.append(_check("S Bv identity", sbv_residual(result, grid), tol.identity))
    checks.append(_check("S/S* duality", source_duality_residual(op, grid, cfg, pairs, seed), tol.identity))

    hautus_min = min(c.min_singular for c in result.controllability.clusters)
    checks.append(
        IdentityCheck(
            "Hautus test",
            hautus_min,
            result.controllability.rank_tol,
            result.controllability.controllable,
            detail="min singular value must exceed tolerance",
        )
    )
    pole = float(np.max(result.gains.closed_poles.real))
    checks.append(IdentityCheck("gain Hurwitz", pole, 0.0, pole < 0, detail="max Re eig(Lambda_N + F_N L_N)"))

    checks.append(_check("A/A* duality", adjoint_residual(result.closed, result.observer, pairs, seed), tol.identity))

    s_report = verify_similarity(result.closed, "S-transform", result.S, check_spectrum=True)
    checks.append(_check("S-transform off-triangular block", s_report.relative, tol.similarity))
    checks.append(_check("S-transform spectrum invariance", s_report.spectrum_mismatch, tol.spectrum))
    t_report = verify_similarity(result.observer, "T-transform", result.S_star)
    checks.append(_check("T-transform cancellation", t_report.relative, tol.similarity))

    closed_abscissa = spectral_abscissa(result.closed)
    observer_abscissa = spectral_abscissa(result.observer)
    predicted = closed_loop_spectrum_prediction(basis, selection, result.system, result.gains, result.alpha)
    checks.append(
        IdentityCheck("closed-loop abscissa", closed_abscissa, 0.0, closed_abscissa < 0, detail="must be negative")
    )
    checks.append(
        IdentityCheck("observer abscissa", observer_abscissa, 0.0, observer_abscissa < 0, detail="must be negative")
    )
    checks.append(
        _check(
            "abscissa prediction",
            abs(closed_abscissa - predicted) / max(1.0, abs(predicted)),
            tol.abscissa,
            detail=f"predicted {predicted:.8g}",
        )
    )

    failed = [c.name for c in checks if not c.passed]
    if failed:
        logger.warning("%d identities failed: %s", len(failed), ", ".join(failed))
    return checks
