"""
Tests for the eigenbasis, unstable-mode selection and trace Gram certificates
"""
from functools import lru_cache

import numpy as np
import pytest

from heatstab.elliptic import helmholtz_config
from heatstab.errors import ConfigError, EigensolverError, InsufficientModesError
from heatstab.grid import assemble_operators, build_grid, gamma1_coordinates, inner_product_gamma1, trace_gamma1
from heatstab.spectral import (
    analytic_eigenvalues,
    compute_eigenbasis,
    degenerate_clusters,
    gram_trace_matrix,
    select_unstable_count,
    suggest_alpha,
    trace_gram_report,
)


@lru_cache(maxsize=None)
def setup(nx, ny, config, count, method="auto"):
    grid = build_grid(nx, ny, boundary_config=config)
    op = assemble_operators(grid)
    basis = compute_eigenbasis(op, grid, count, method=method)
    return grid, op, basis


def test_config_a_matches_analytic():
    grid, _, basis = setup(63, 63, "A", 4, "shift-invert")
    exact = analytic_eigenvalues(grid, 4)
    print(f"config A lambdas: {basis.lambdas} (analytic {exact})")
    assert exact[0] == pytest.approx(-np.pi**2 * 1.25)
    assert abs(basis.lambdas[0] - exact[0]) <= 0.01 * abs(exact[0])
    assert abs(basis.lambdas[1] - exact[1]) <= 0.01 * abs(exact[1])
    assert np.all(np.diff(basis.lambdas) <= 0)


def test_second_order_convergence():
    exact = -np.pi**2 * 1.25
    _, _, coarse = setup(15, 15, "A", 2)
    _, _, fine = setup(31, 31, "A", 2)
    ratio = abs(coarse.lambdas[0] - exact) / abs(fine.lambdas[0] - exact)
    print(f"error ratio 15 -> 31: {ratio:.3f}")
    assert 3.5 <= ratio <= 4.5


def test_config_b_first_mode_is_one_dimensional():
    # phi_1 is constant in y, so lambda_1 equals the 1-D Dirichlet eigenvalue
    for n in (15, 31):
        grid, _, basis = setup(n, n, "B", 3)
        h = grid.hx
        expected = -(2.0 / h**2) * (1.0 - np.cos(np.pi * h))
        assert basis.lambdas[0] == pytest.approx(expected, rel=1e-10)
        x = gamma1_coordinates(grid)
        trace = trace_gamma1(basis.phi(1), grid)
        assert np.max(np.abs(trace - np.sqrt(2.0) * np.sin(np.pi * x))) < 1e-8


def test_config_a_trace_convergence():
    errors = []
    for n in (15, 31):
        grid, _, basis = setup(n, n, "A", 2)
        x = gamma1_coordinates(grid)
        errors.append(np.max(np.abs(trace_gamma1(basis.phi(1), grid) - 2.0 * np.sin(np.pi * x))))
    print(f"trace errors: {errors}")
    assert errors[1] <= 0.01
    assert errors[1] < errors[0]


def test_config_a_traces_are_not_orthogonal():
    grid, _, basis = setup(31, 31, "A", 2)
    t1 = trace_gamma1(basis.phi(1), grid)
    t2 = trace_gamma1(basis.phi(2), grid)
    assert abs(inner_product_gamma1(t1, t2, grid)) == pytest.approx(2.0, rel=0.05)


def test_dense_and_shift_invert_agree():
    _, _, dense = setup(15, 15, "B", 6, "dense")
    _, _, arnoldi = setup(15, 15, "B", 6, "shift-invert")
    assert np.allclose(dense.lambdas, arnoldi.lambdas, rtol=1e-9)
    for j in range(3):
        assert abs(abs(np.dot(dense.phis[:, j], arnoldi.phis[:, j])) - np.dot(dense.phis[:, j], dense.phis[:, j])) < 1e-6


def test_orthonormal_and_accurate():
    grid, op, basis = setup(15, 15, "B", 8)
    gram = basis.phis.T @ (grid.omega_weights[:, None] * basis.phis)
    assert np.max(np.abs(gram - np.eye(8))) <= 1e-10
    assert np.max(basis.residuals) <= 1e-9
    assert basis.phi(1)[np.argmax(np.abs(basis.phi(1)))] > 0


def test_select_unstable_count():
    _, _, basis = setup(63, 63, "A", 4, "shift-invert")
    assert select_unstable_count(basis, 5.0).N == 0
    assert select_unstable_count(basis, 13.0).N == 1
    selection = select_unstable_count(basis, 35.0)
    assert selection.N == 2
    assert selection.margin == pytest.approx(basis.lambdas[2] + 35.0)
    assert selection.margin < 0


def test_insufficient_modes():
    _, _, basis = setup(15, 15, "B", 1)
    with pytest.raises(InsufficientModesError) as err:
        select_unstable_count(basis, 13.0)
    assert isinstance(err.value, ConfigError)


def test_mode_count_validated():
    grid = build_grid(4, 4)
    op = assemble_operators(grid)
    with pytest.raises(ConfigError):
        compute_eigenbasis(op, grid, 0)
    with pytest.raises(ConfigError):
        compute_eigenbasis(op, grid, 17)
    with pytest.raises(ConfigError):
        compute_eigenbasis(op, grid, 3, method="lobpcg")


def test_dense_solver_failure_is_reported(monkeypatch):
    grid = build_grid(4, 4)
    op = assemble_operators(grid)

    def broken(*args, **kwargs):
        raise np.linalg.LinAlgError("did not converge")

    monkeypatch.setattr("heatstab.spectral.la.eigh", broken)
    with pytest.raises(EigensolverError) as err:
        compute_eigenbasis(op, grid, 3, method="dense")
    assert err.value.exit_code == 4


def test_degenerate_clusters():
    clusters = degenerate_clusters([-1.0, -1.0 - 1e-9, -2.0, -3.0, -3.0], 1e-6)
    assert clusters == [(0, 1), (2,), (3, 4)]


def test_gram_certificates():
    grid, _, basis = setup(31, 31, "B", 6)
    reports = trace_gram_report(basis, grid)
    assert len(reports) == len(basis.clusters)
    assert all(not r.near_singular for r in reports[:2])
    # the Gram matrix of the first mode is its squared trace norm, close to 1
    first = gram_trace_matrix(basis, (0,), grid)
    assert first.min_singular == pytest.approx(1.0, rel=0.05)


def test_suggested_alpha_is_not_resonant():
    grid, op, basis = setup(15, 15, "B", 8)
    mu = 13.0
    alpha = suggest_alpha(basis, mu)
    assert alpha is not None and alpha > 0
    cfg = helmholtz_config(op, basis, -alpha - mu)
    assert cfg.resonance_margin > 1.0


if __name__ == "__main__":
    test_config_a_matches_analytic()
    test_second_order_convergence()
    test_config_b_first_mode_is_one_dimensional()
    test_select_unstable_count()
    print("spectral tests passed")
