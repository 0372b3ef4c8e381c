"""
Synthesis Module

Builds the truncated modal system (Lambda_N, F_N), checks it with the Hautus
test, designs a Hurwitz gain by LQR, and assembles the discrete generators:

    closed loop    over (w, v):   [[A+mu, B], [-Bv K, -Bv K S - alpha]]
    observer       over (w, p):   [[A+mu, -K* Bv*], [T, -alpha - S* K* Bv*]]
    sensor plant   over (w, p):   [[A+mu, 0], [T, -alpha]]   input [B; 0]
    output feedback over (w, v, p, w_hat, p_hat)

The observer generator is the adjoint of the closed loop in the weighted
product inner product (W on fields, Gamma1 weights on traces).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment
from scipy.sparse.linalg import ArpackError, eigs
from scipy.sparse.linalg import norm as sparse_norm

from heatstab.elliptic import (
    HelmholtzConfig,
    adjoint_sylvester_operator,
    solve_neumann_data,
    solve_source,
    sylvester_operator,
)
from heatstab.errors import ConfigError, EigensolverError, RiccatiError, UncontrollableError
from heatstab.grid import DiscreteOperator, Grid, trace_matrix
from heatstab.spectral import EigenBasis, UnstableSelection, degenerate_clusters

logger = logging.getLogger(__name__)

RANK_TOL_FACTOR = 1e-8
POLE_MARGIN = 1e-9
DENSE_ABSCISSA_LIMIT = 2500


# ---------------------------------------------------------------------------
# Truncated system and gain design
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TruncatedSystem:
    """
    Modal truncation of the shifted plant.

    Attributes:
        Lambda_N: diag(lambda_j + mu), j <= N
        F_N: F[k, i] = <zeta_i, phi_k>_Omega with zeta_i the Neumann solve of trace(phi_i)
        theta: the shift used for zeta_i
        G_N: Gamma1 Gram matrix of the N traces
        D_N: diag(1 / (theta - lambda_k))
        zetas: (nx*ny, N) columns zeta_i
    """

    Lambda_N: np.ndarray
    F_N: np.ndarray
    theta: float
    G_N: Optional[np.ndarray] = None
    D_N: Optional[np.ndarray] = None
    zetas: Optional[np.ndarray] = None
    cluster_tol: Optional[float] = None

    @property
    def N(self) -> int:
        return int(self.Lambda_N.shape[0])

    @classmethod
    def from_matrices(cls, Lambda, F, cluster_tol: Optional[float] = None) -> "TruncatedSystem":
        Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
        F = np.atleast_2d(np.asarray(F, dtype=float))
        if Lambda.shape != F.shape or Lambda.shape[0] != Lambda.shape[1]:
            raise ConfigError(f"Lambda {Lambda.shape} and F {F.shape} must be square and equal in size")
        return cls(Lambda_N=Lambda, F_N=F, theta=float("nan"), cluster_tol=cluster_tol)

    def factorization_residual(self) -> float:
        """max |F_N - D_N G_N| / max |F_N|."""
        if self.G_N is None or self.D_N is None:
            raise ConfigError("factorization needs G_N and D_N; system was built from raw matrices")
        scale = float(np.max(np.abs(self.F_N)))
        resid = float(np.max(np.abs(self.F_N - self.D_N @ self.G_N)))
        return resid / scale if scale > 0 else resid


@dataclass(frozen=True)
class ClusterCheck:
    eigenvalue: float
    indices: tuple
    min_singular: float
    block_min_singular: float
    block_det: float
    passed: bool


@dataclass(frozen=True)
class ControllabilityReport:
    controllable: bool
    rank_tol: float
    clusters: List[ClusterCheck]

    @property
    def failing(self) -> Optional[ClusterCheck]:
        for check in self.clusters:
            if not check.passed:
                return check
        return None


@dataclass(frozen=True, eq=False)
class GainSet:
    L_N: np.ndarray
    closed_poles: np.ndarray
    riccati: np.ndarray
    riccati_residual: float


def assemble_truncated(
    basis: EigenBasis,
    selection: UnstableSelection,
    cfg: HelmholtzConfig,
    op: DiscreteOperator,
    grid: Grid,
) -> TruncatedSystem:
    """Builds Lambda_N and F_N from the eigenbasis and the Neumann-data solves."""
    N = selection.N
    if N < 1:
        raise ConfigError(f"no unstable modes at mu={selection.mu:g}; nothing to stabilize")
    phis = basis.phis[:, :N]
    lambdas = basis.lambdas[:N]
    traces = phis[np.asarray(grid.gamma1_nodes)]

    zetas = solve_neumann_data(op, grid, cfg, traces)
    F = phis.T @ (grid.omega_weights[:, None] * zetas)
    G = traces.T @ (grid.gamma1_weights[:, None] * traces)
    G = 0.5 * (G + G.T)
    D = np.diag(1.0 / (cfg.theta - lambdas))

    return TruncatedSystem(
        Lambda_N=np.diag(lambdas + selection.mu),
        F_N=F,
        theta=cfg.theta,
        G_N=G,
        D_N=D,
        zetas=zetas,
        cluster_tol=basis.cluster_tol,
    )


def _clusters_of(sys: TruncatedSystem) -> List[tuple]:
    diag = np.diag(sys.Lambda_N)
    order = np.argsort(-diag, kind="stable")
    tol = sys.cluster_tol
    if tol is None:
        tol = 1e-6 * max(1.0, float(np.max(np.abs(diag))))
    groups = degenerate_clusters(diag[order], tol)
    return [tuple(int(order[i]) for i in g) for g in groups]


def check_controllability(sys: TruncatedSystem, rank_tol: Optional[float] = None) -> ControllabilityReport:
    """
    Hautus test per eigenvalue cluster of Lambda_N.

    For each cluster the smallest singular value of [lambda I - Lambda_N | F_N]
    must exceed rank_tol (default 1e-8 ||F_N||). The cluster's diagonal block
    of F_N is reported alongside (its determinant must not vanish).
    """
    F = sys.F_N
    N = sys.N
    if rank_tol is None:
        rank_tol = RANK_TOL_FACTOR * max(float(np.linalg.norm(F, 2)), np.finfo(float).tiny)

    checks = []
    for group in _clusters_of(sys):
        idx = list(group)
        lam = float(np.mean(np.diag(sys.Lambda_N)[idx]))
        pencil = np.hstack([lam * np.eye(N) - sys.Lambda_N, F])
        smin = float(np.linalg.svd(pencil, compute_uv=False).min())
        block = F[np.ix_(idx, idx)]
        block_smin = float(np.linalg.svd(block, compute_uv=False).min())
        checks.append(
            ClusterCheck(
                eigenvalue=lam,
                indices=group,
                min_singular=smin,
                block_min_singular=block_smin,
                block_det=float(np.linalg.det(block)),
                passed=smin > rank_tol,
            )
        )

    report = ControllabilityReport(
        controllable=all(c.passed for c in checks),
        rank_tol=float(rank_tol),
        clusters=checks,
    )
    if not report.controllable:
        bad = report.failing
        logger.warning(
            "Hautus test fails at lambda+mu=%.6g (sigma_min=%.3e <= %.3e)", bad.eigenvalue, bad.min_singular, rank_tol
        )
    return report


def design_gain(
    sys: TruncatedSystem,
    q: float = 1.0,
    r: float = 1.0,
    pole_margin: float = POLE_MARGIN,
    rank_tol: Optional[float] = None,
) -> GainSet:
    """
    LQR gain with Q = q I, R = r I from the ordered Schur form of the Hamiltonian.

    Solves Lambda^T P + P Lambda - P F R^-1 F^T P + Q = 0 and returns
    L_N = -R^-1 F^T P, so Lambda_N + F_N L_N is Hurwitz.

    Raises:
        UncontrollableError: Hautus test fails
        RiccatiError: Hamiltonian eigenvalues on the imaginary axis, or the
            closed poles are not at least pole_margin inside the left half-plane
    """
    if q <= 0 or r <= 0:
        raise ConfigError(f"LQR weights must be positive, got q={q}, r={r}")
    report = check_controllability(sys, rank_tol)
    if not report.controllable:
        bad = report.failing
        raise UncontrollableError(bad.eigenvalue, bad.indices, bad.min_singular)

    Lam = sys.Lambda_N
    F = sys.F_N
    N = sys.N
    H = np.block([[Lam, -F @ F.T / r], [-q * np.eye(N), -Lam.T]])

    try:
        h_eigs = np.linalg.eigvals(H)
    except np.linalg.LinAlgError as exc:
        raise RiccatiError(f"Hamiltonian eigensolve failed: {exc}") from exc
    axis_tol = 1e-12 * max(1.0, float(np.linalg.norm(H, 2)))
    if np.min(np.abs(h_eigs.real)) <= axis_tol:
        raise RiccatiError(
            f"Hamiltonian has eigenvalues on the imaginary axis (min |Re| = {np.min(np.abs(h_eigs.real)):.3e})"
        )

    try:
        _, U, sdim = la.schur(H, output="real", sort="lhp")
    except la.LinAlgError as exc:
        raise RiccatiError(f"Hamiltonian Schur decomposition failed: {exc}") from exc
    if sdim != N:
        raise RiccatiError(f"stable invariant subspace has dimension {sdim}, expected {N}")
    U1 = U[:N, :N]
    U2 = U[N:, :N]
    try:
        P = la.solve(U1.T, U2.T).T
    except la.LinAlgError as exc:
        raise RiccatiError(f"stable subspace basis is singular: {exc}") from exc
    P = 0.5 * (P + P.T)

    L = -F.T @ P / r
    poles = np.linalg.eigvals(Lam + F @ L)
    residual = Lam.T @ P + P @ Lam - P @ F @ F.T @ P / r + q * np.eye(N)
    riccati_residual = float(np.max(np.abs(residual))) / max(1.0, float(np.max(np.abs(P))))

    if np.max(poles.real) >= -pole_margin:
        raise RiccatiError(f"designed gain is not Hurwitz: max Re = {np.max(poles.real):.3e}")

    return GainSet(L_N=L, closed_poles=poles, riccati=P, riccati_residual=riccati_residual)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AssembledGenerator:
    """
    A linear generator over a stacked state.

    Hashes by identity, so factorizations can be cached per instance.

    Attributes:
        M: square sparse matrix
        block_map: block name -> slice of the stacked state
        weights: quadrature weights of the product-space inner product
        input_matrix: optional load operator for an external input
    """

    M: sp.csr_matrix
    block_map: Dict[str, slice]
    weights: np.ndarray
    input_matrix: Optional[sp.csr_matrix] = None
    name: str = ""

    @property
    def size(self) -> int:
        return int(self.M.shape[0])

    @classmethod
    def from_dense(cls, matrix, weights=None, name: str = "") -> "AssembledGenerator":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        n = matrix.shape[0]
        if weights is None:
            weights = np.ones(n)
        return cls(M=sp.csr_matrix(matrix), block_map={"x": slice(0, n)}, weights=np.asarray(weights), name=name)

    def block(self, row: str, col: str) -> np.ndarray:
        return self.M[self.block_map[row], self.block_map[col]].toarray()

    def dense(self) -> np.ndarray:
        return self.M.toarray()

    def inner(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Weighted product-space inner product, columnwise for 2-D inputs."""
        w = self.weights[:, None] if np.ndim(x) == 2 else self.weights
        return np.sum(w * x * y, axis=0)

    def norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(max(float(self.inner(x, x)), 0.0)))

    def split(self, x: np.ndarray) -> Dict[str, np.ndarray]:
        return {name: x[sl] for name, sl in self.block_map.items()}


def _layout(grid: Grid, names: Sequence[str]):
    block_map = {}
    weights = []
    start = 0
    for name in names:
        is_field = name.startswith("w")
        size = grid.size if is_field else grid.nx
        block_map[name] = slice(start, start + size)
        weights.append(grid.omega_weights if is_field else grid.gamma1_weights)
        start += size
    return block_map, np.concatenate(weights)


@dataclass(frozen=True, eq=False)
class FeedbackParts:
    """Dense pieces shared by the closed-loop, observer and output-feedback generators."""

    phis: np.ndarray
    Bv: np.ndarray
    Bv_star: np.ndarray
    K: np.ndarray
    K_star: np.ndarray
    S: np.ndarray
    S_star: np.ndarray
    S_star_phis: np.ndarray


def feedback_parts(
    op: DiscreteOperator,
    grid: Grid,
    basis: EigenBasis,
    gains: GainSet,
    cfg: HelmholtzConfig,
    S: Optional[np.ndarray] = None,
    S_star: Optional[np.ndarray] = None,
) -> FeedbackParts:
    """
    K w = L Phi^T W w          (K_i w = <w, sum_k l_ik phi_k>)
    Bv c = sum_j c_j trace(phi_j)
    K* c = Phi L^T c,  Bv* g = (<trace(phi_j), g>_Gamma1)_j
    """
    N = gains.L_N.shape[0]
    phis = basis.phis[:, :N]
    Bv = phis[np.asarray(grid.gamma1_nodes)]
    Bv_star = Bv.T * grid.gamma1_weights[None, :]
    K = gains.L_N @ (phis.T * grid.omega_weights[None, :])
    K_star = phis @ gains.L_N.T
    if S is None:
        S = sylvester_operator(op, grid, cfg)
    if S_star is None:
        S_star = adjoint_sylvester_operator(op, grid, cfg)
    xi = solve_source(op, grid, cfg, phis)
    S_star_phis = xi[np.asarray(grid.gamma1_nodes)]
    return FeedbackParts(
        phis=phis, Bv=Bv, Bv_star=Bv_star, K=K, K_star=K_star, S=S, S_star=S_star, S_star_phis=S_star_phis
    )


def _shift_of(cfg: HelmholtzConfig, alpha: float) -> float:
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    return -cfg.theta - alpha


def assemble_closed_loop(
    op: DiscreteOperator,
    grid: Grid,
    basis: EigenBasis,
    gains: GainSet,
    cfg: HelmholtzConfig,
    alpha: float,
    parts: Optional[FeedbackParts] = None,
) -> AssembledGenerator:
    """
    State-feedback generator over (w, v).

    mu is recovered from theta = -alpha - mu. The actuator row realizes
    v_t = -alpha v - Bv (K w + K S v), with S v = -zeta_v from the Neumann solve.
    """
    mu = _shift_of(cfg, alpha)
    if parts is None:
        parts = feedback_parts(op, grid, basis, gains, cfg)
    n, nx = grid.size, grid.nx

    top_left = op.A_h + mu * sp.identity(n, format="csr")
    bottom_left = -parts.Bv @ parts.K
    bottom_right = -parts.Bv @ (parts.K @ parts.S) - alpha * np.eye(nx)
    M = sp.bmat(
        [[top_left, op.B_h], [sp.csr_matrix(bottom_left), sp.csr_matrix(bottom_right)]],
        format="csr",
    )
    block_map, weights = _layout(grid, ("w", "v"))
    return AssembledGenerator(M=M, block_map=block_map, weights=weights, name="closed-loop")


def assemble_observer_generator(
    op: DiscreteOperator,
    grid: Grid,
    basis: EigenBasis,
    gains: GainSet,
    cfg: HelmholtzConfig,
    alpha: float,
    parts: Optional[FeedbackParts] = None,
) -> AssembledGenerator:
    """
    Observer error generator over (w, p).

    The S* K* Bv* block is assembled from trace(xi_phi_j), the source solves
    with f = phi_j.
    """
    mu = _shift_of(cfg, alpha)
    if parts is None:
        parts = feedback_parts(op, grid, basis, gains, cfg)
    n, nx = grid.size, grid.nx

    top_left = op.A_h + mu * sp.identity(n, format="csr")
    top_right = -parts.K_star @ parts.Bv_star
    bottom_right = -alpha * np.eye(nx) - parts.S_star_phis @ gains.L_N.T @ parts.Bv_star
    M = sp.bmat(
        [[top_left, sp.csr_matrix(top_right)], [trace_matrix(grid), sp.csr_matrix(bottom_right)]],
        format="csr",
    )
    block_map, weights = _layout(grid, ("w", "p"))
    return AssembledGenerator(M=M, block_map=block_map, weights=weights, name="observer")


def assemble_open_loop(op: DiscreteOperator, grid: Grid, mu: float) -> AssembledGenerator:
    M = (op.A_h + mu * sp.identity(grid.size, format="csr")).tocsr()
    block_map, weights = _layout(grid, ("w",))
    return AssembledGenerator(M=M, block_map=block_map, weights=weights, input_matrix=op.B_h, name="open-loop")


def assemble_sensor_plant(op: DiscreteOperator, grid: Grid, mu: float, alpha: float) -> AssembledGenerator:
    """Plant with sensor dynamics p_t = -alpha p + trace(w); input enters through [B_h; 0]."""
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    n, nx = grid.size, grid.nx
    M = sp.bmat(
        [
            [op.A_h + mu * sp.identity(n, format="csr"), None],
            [trace_matrix(grid), -alpha * sp.identity(nx, format="csr")],
        ],
        format="csr",
    )
    inputs = sp.vstack([op.B_h, sp.csr_matrix((nx, nx))], format="csr")
    block_map, weights = _layout(grid, ("w", "p"))
    return AssembledGenerator(M=M, block_map=block_map, weights=weights, input_matrix=inputs, name="sensor-plant")


def assemble_observer_composition(plant: AssembledGenerator, observer: AssembledGenerator) -> AssembledGenerator:
    """
    Plant with sensor together with the observer, over (w, p, w_hat, p_hat):

        [[P, 0], [P - A*, A*]]

    The observer reads only the measured p, since P - A* vanishes on the w columns.
    """
    if plant.size != observer.size:
        raise ConfigError("plant and observer generators differ in size")
    P = plant.M
    A_star = observer.M
    M = sp.bmat([[P, None], [P - A_star, A_star]], format="csr")
    inputs = None
    if plant.input_matrix is not None:
        inputs = sp.vstack([plant.input_matrix, plant.input_matrix], format="csr")
    n = plant.size
    block_map = {
        "w": plant.block_map["w"],
        "p": plant.block_map["p"],
        "w_hat": slice(n + plant.block_map["w"].start, n + plant.block_map["w"].stop),
        "p_hat": slice(n + plant.block_map["p"].start, n + plant.block_map["p"].stop),
    }
    weights = np.concatenate([plant.weights, plant.weights])
    return AssembledGenerator(M=M, block_map=block_map, weights=weights, input_matrix=inputs, name="observer-run")


def assemble_output_feedback(
    op: DiscreteOperator,
    grid: Grid,
    basis: EigenBasis,
    gains: GainSet,
    cfg: HelmholtzConfig,
    alpha: float,
    parts: Optional[FeedbackParts] = None,
) -> AssembledGenerator:
    """
    Observer-based output feedback over (w, v, p, w_hat, p_hat).

        w_t     = (A+mu) w + B v
        v_t     = -Bv K w_hat - (Bv K S + alpha) v
        p_t     = T w - alpha p
        w_hat_t = (A+mu) w_hat + B v + K* Bv* (p - p_hat)
        p_hat_t = T w_hat - alpha p_hat + S* K* Bv* (p - p_hat)
    """
    mu = _shift_of(cfg, alpha)
    if parts is None:
        parts = feedback_parts(op, grid, basis, gains, cfg)
    n, nx = grid.size, grid.nx

    Amu = op.A_h + mu * sp.identity(n, format="csr")
    T = trace_matrix(grid)
    I_nx = sp.identity(nx, format="csr")
    BvK = sp.csr_matrix(parts.Bv @ parts.K)
    actuator = sp.csr_matrix(-parts.Bv @ (parts.K @ parts.S) - alpha * np.eye(nx))
    inject_w = sp.csr_matrix(parts.K_star @ parts.Bv_star)
    inject_p = sp.csr_matrix(parts.S_star_phis @ gains.L_N.T @ parts.Bv_star)

    M = sp.bmat(
        [
            [Amu, op.B_h, None, None, None],
            [None, actuator, None, -BvK, None],
            [T, None, -alpha * I_nx, None, None],
            [None, op.B_h, inject_w, Amu, -inject_w],
            [None, None, inject_p, T, -alpha * I_nx - inject_p],
        ],
        format="csr",
    )
    block_map, weights = _layout(grid, ("w", "v", "p", "w_hat", "p_hat"))
    return AssembledGenerator(M=M, block_map=block_map, weights=weights, name="output-feedback")


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimilarityReport:
    which: str
    off_block: float
    relative: float
    transformed: np.ndarray
    block_map: Dict[str, slice] = field(default_factory=dict)
    spectrum_mismatch: Optional[float] = None

    def block(self, row: str, col: str) -> np.ndarray:
        return self.transformed[self.block_map[row], self.block_map[col]]


def spectrum_distance(a: np.ndarray, b: np.ndarray) -> float:
    """
    Multiset distance between two spectra: optimal matching, worst pair,
    relative to max(1, max |a|).
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        return float("inf")
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max() / max(1.0, float(np.max(np.abs(a)))))


def verify_similarity(
    gen: AssembledGenerator,
    which: str,
    transform: Optional[np.ndarray] = None,
    check_spectrum: bool = False,
) -> SimilarityReport:
    """
    Applies a block transform and measures the block it should annihilate.

    S-transform: (f, g) -> (f + S g, g) on the closed loop; the (w, v) block of
        the result equals -(A+mu+alpha) S + B and must vanish.
    T-transform: (f, g) -> (f, g - S* f) on the observer; the (p, w) block
        equals -S*(A+mu) - alpha S* + B* and must vanish.
    P-transform: (f, g, h, k, l) -> (f, g, h, k - f, l - h) on the output
        feedback; the estimation-error rows must not see the plant columns.
    """
    M = gen.dense()
    n = gen.size
    bm = gen.block_map
    if which == "S-transform":
        w, v = bm["w"], bm["v"]
        fwd = np.eye(n)
        inv = np.eye(n)
        fwd[w, v] = transform
        inv[w, v] = -transform
        out = fwd @ M @ inv
        off = out[w, v]
        ref = np.linalg.norm(gen.block("w", "v"))
    elif which == "T-transform":
        w, p = bm["w"], bm["p"]
        fwd = np.eye(n)
        inv = np.eye(n)
        fwd[p, w] = -transform
        inv[p, w] = transform
        out = fwd @ M @ inv
        off = out[p, w]
        ref = np.linalg.norm(gen.block("p", "w"))
    elif which == "P-transform":
        fwd = sp.identity(n, format="lil")
        inv = sp.identity(n, format="lil")
        for est, src in (("w_hat", "w"), ("p_hat", "p")):
            rows = np.arange(bm[est].start, bm[est].stop)
            cols = np.arange(bm[src].start, bm[src].stop)
            fwd[rows, cols] = -1.0
            inv[rows, cols] = 1.0
        out = (fwd.tocsr() @ gen.M @ inv.tocsr()).toarray()
        err_rows = np.r_[bm["w_hat"], bm["p_hat"]]
        plant_cols = np.r_[bm["w"], bm["v"], bm["p"]]
        off = out[np.ix_(err_rows, plant_cols)]
        ref = sparse_norm(gen.M)
    else:
        raise ConfigError(f"unknown transform '{which}'")

    off_norm = float(np.linalg.norm(off))
    relative = off_norm / ref if ref > 0 else off_norm

    mismatch = None
    if check_spectrum:
        try:
            mismatch = spectrum_distance(np.linalg.eigvals(M), np.linalg.eigvals(out))
        except np.linalg.LinAlgError as exc:
            raise EigensolverError(f"{which} spectrum comparison failed: {exc}") from exc

    return SimilarityReport(
        which=which,
        off_block=off_norm,
        relative=relative,
        transformed=out,
        block_map=dict(bm),
        spectrum_mismatch=mismatch,
    )


def adjoint_residual(
    gen: AssembledGenerator,
    adj: AssembledGenerator,
    pairs: int = 100,
    seed: int = 0,
) -> float:
    """max |<M x, y> - <x, M* y>| / (||M x|| ||y||) over random pairs."""
    if gen.size != adj.size:
        raise ConfigError("generator and adjoint differ in size")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((gen.size, pairs))
    Y = rng.standard_normal((gen.size, pairs))
    MX = gen.M @ X
    lhs = gen.inner(MX, Y)
    rhs = gen.inner(X, adj.M @ Y)
    scale = np.sqrt(gen.inner(MX, MX) * gen.inner(Y, Y))
    return float(np.max(np.abs(lhs - rhs) / scale))


def spectral_abscissa(gen: Union[AssembledGenerator, np.ndarray], dense_limit: int = DENSE_ABSCISSA_LIMIT) -> float:
    """
    Largest real part of the generator's eigenvalues.

    Dense eigensolve up to dense_limit; above it, the eigenvalues nearest
    zero by shift-invert Arnoldi, which for these generators include the
    rightmost ones.
    """
    if isinstance(gen, AssembledGenerator):
        M = gen.M
    else:
        M = np.atleast_2d(np.asarray(gen, dtype=float))
    n = M.shape[0]
    if n <= dense_limit:
        dense = M.toarray() if sp.issparse(M) else M
        try:
            values = np.linalg.eigvals(dense)
        except np.linalg.LinAlgError as exc:
            raise EigensolverError(f"dense eigensolve failed: {exc}") from exc
        return float(np.max(values.real))
    try:
        values = eigs(sp.csc_matrix(M), k=min(24, n - 2), sigma=0.0, which="LM", return_eigenvectors=False)
    except ArpackError as exc:
        raise EigensolverError(f"shift-invert Arnoldi failed: {exc}") from exc
    return float(np.max(values.real))


def closed_loop_spectrum_prediction(
    basis: EigenBasis,
    selection: UnstableSelection,
    system: TruncatedSystem,
    gains: GainSet,
    alpha: float,
) -> float:
    """Predicted abscissa max(eig(Lambda_N + F_N L_N), lambda_(N+1) + mu, -alpha)."""
    modal = float(np.max(np.linalg.eigvals(system.Lambda_N + system.F_N @ gains.L_N).real))
    return max(modal, selection.margin, -float(alpha))


# ---------------------------------------------------------------------------
# End-to-end synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    selection: UnstableSelection
    system: TruncatedSystem
    controllability: ControllabilityReport
    gains: GainSet
    cfg: HelmholtzConfig
    alpha: float
    parts: FeedbackParts
    closed: AssembledGenerator
    observer: AssembledGenerator

    @property
    def S(self) -> np.ndarray:
        return self.parts.S

    @property
    def S_star(self) -> np.ndarray:
        return self.parts.S_star


def synthesize(
    op: DiscreteOperator,
    grid: Grid,
    basis: EigenBasis,
    selection: UnstableSelection,
    cfg: HelmholtzConfig,
    alpha: float,
    lqr_q: float = 1.0,
    lqr_r: float = 1.0,
    rank_tol: Optional[float] = None,
    pole_margin: float = POLE_MARGIN,
) -> SynthesisResult:
    """Runs truncation, controllability, gain design and generator assembly."""
    system = assemble_truncated(basis, selection, cfg, op, grid)
    report = check_controllability(system, rank_tol)
    gains = design_gain(system, lqr_q, lqr_r, pole_margin, rank_tol)
    parts = feedback_parts(op, grid, basis, gains, cfg)
    closed = assemble_closed_loop(op, grid, basis, gains, cfg, alpha, parts)
    observer = assemble_observer_generator(op, grid, basis, gains, cfg, alpha, parts)
    logger.info(
        "synthesized N=%d gain, closed poles max Re %.4g", selection.N, float(np.max(gains.closed_poles.real))
    )
    return SynthesisResult(
        selection=selection,
        system=system,
        controllability=report,
        gains=gains,
        cfg=cfg,
        alpha=float(alpha),
        parts=parts,
        closed=closed,
        observer=observer,
    )
