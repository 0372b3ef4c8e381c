"""
Tests for the shifted elliptic solves and the Sylvester operators built from them
"""
from functools import lru_cache

import numpy as np
import pytest

from heatstab.elliptic import (
    adjoint_sylvester_operator,
    helmholtz_config,
    neumann_map,
    solve_neumann_data,
    solve_source,
    sylvester_operator,
    sylvester_residual,
    trace_of_source,
    verify_resolvent_identity,
)
from heatstab.errors import DimensionError, ResonanceError
from heatstab.grid import assemble_operators, build_grid, inner_product_gamma1, inner_product_omega
from heatstab.spectral import compute_eigenbasis


@lru_cache(maxsize=None)
def setup(config="B", n=15):
    grid = build_grid(n, n, boundary_config=config)
    op = assemble_operators(grid)
    basis = compute_eigenbasis(op, grid, 8)
    return grid, op, basis


def test_resonant_shift_refused():
    grid, op, basis = setup()
    with pytest.raises(ResonanceError) as err:
        helmholtz_config(op, basis, float(basis.lambdas[1]))
    assert err.value.j == 2
    assert "j=2" in str(err.value)
    assert err.value.exit_code == 3


def test_margin_reported():
    grid, op, basis = setup()
    theta = -14.0
    cfg = helmholtz_config(op, basis, theta)
    expected = np.min(np.abs(theta - basis.lambdas))
    assert cfg.resonance_margin == pytest.approx(expected)
    assert cfg.nearest_mode == int(np.argmin(np.abs(theta - basis.lambdas))) + 1


def test_solve_inverts_shifted_operator():
    grid, op, basis = setup()
    cfg = helmholtz_config(op, basis, -14.0)
    rhs = np.random.default_rng(0).standard_normal(grid.size)
    x = cfg.solve(rhs)
    residual = op.A_h @ x + 14.0 * x - rhs
    assert np.max(np.abs(residual)) <= 1e-9 * np.max(np.abs(rhs))


def test_neumann_data_solve():
    grid, op, basis = setup()
    cfg = helmholtz_config(op, basis, -14.0)
    g = np.sin(np.pi * np.arange(1, grid.nx + 1) * grid.hx)
    zeta = solve_neumann_data(op, grid, cfg, g)
    # A zeta + B g = theta zeta
    assert np.max(np.abs(op.A_h @ zeta + op.B_h @ g + 14.0 * zeta)) <= 1e-9 * np.max(np.abs(op.B_h @ g))
    with pytest.raises(DimensionError):
        solve_neumann_data(op, grid, cfg, np.ones(grid.nx + 1))


def test_harmonic_extension():
    grid, op, _ = setup("A")
    g = np.ones(grid.nx)
    z = neumann_map(op, grid, g)
    assert np.max(np.abs(op.A_h @ z + op.B_h @ g)) <= 1e-8 * np.max(np.abs(op.B_h @ g))


def test_sylvester_operator_residual():
    for config in ("A", "B"):
        grid, op, basis = setup(config)
        cfg = helmholtz_config(op, basis, -14.0)
        S = sylvester_operator(op, grid, cfg)
        assert S.shape == (grid.size, grid.nx)
        assert sylvester_residual(op, cfg, S) <= 1e-10


def test_adjoint_sylvester_duality():
    grid, op, basis = setup()
    cfg = helmholtz_config(op, basis, -14.0)
    S = sylvester_operator(op, grid, cfg)
    S_star = adjoint_sylvester_operator(op, grid, cfg)
    rng = np.random.default_rng(1)
    for _ in range(10):
        g = rng.standard_normal(grid.nx)
        f = rng.standard_normal(grid.size)
        lhs = inner_product_omega(S @ g, f, grid)
        rhs = inner_product_gamma1(g, S_star @ f, grid)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
        assert np.allclose(S_star @ f, trace_of_source(op, grid, cfg, f), atol=1e-12)


def test_source_duality_sign():
    # <zeta_g, f> = -<g, trace(xi_f)>
    grid, op, basis = setup()
    cfg = helmholtz_config(op, basis, -20.0)
    g = np.linspace(0.5, 1.5, grid.nx)
    f = np.ones(grid.size)
    zeta = solve_neumann_data(op, grid, cfg, g)
    xi = solve_source(op, grid, cfg, f)
    lhs = inner_product_omega(zeta, f, grid)
    rhs = -inner_product_gamma1(g, xi[grid.gamma1_nodes], grid)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_resolvent_identity():
    for config in ("A", "B"):
        grid, op, basis = setup(config)
        cfg = helmholtz_config(op, basis, -14.0)
        report = verify_resolvent_identity(basis, cfg, op, grid)
        print(f"config {config}: resolvent relative residual {report.relative:.2e}, condition {report.condition:.1e}")
        assert report.residual.shape == (6, 6)
        assert report.relative <= 1e-9


def test_resolvent_identity_far_shift():
    # -10|lambda_1| falls in the gap between lambda_8 and lambda_9 of config A
    grid, op, basis = setup("A")
    theta = -10.0 * abs(basis.lambdas[0])
    cfg = helmholtz_config(op, basis, theta)
    report = verify_resolvent_identity(basis, cfg, op, grid)
    print(f"theta={theta:.3f}: resolvent relative residual {report.relative:.2e}")
    assert report.relative <= 1e-9


def test_solves_are_linear():
    grid, op, basis = setup()
    cfg = helmholtz_config(op, basis, -20.0)
    rng = np.random.default_rng(11)
    g1, g2 = rng.standard_normal(grid.nx), rng.standard_normal(grid.nx)
    f1, f2 = rng.standard_normal(grid.size), rng.standard_normal(grid.size)
    a, b = 1.7, -0.3

    zeta = solve_neumann_data(op, grid, cfg, a * g1 + b * g2)
    combined = a * solve_neumann_data(op, grid, cfg, g1) + b * solve_neumann_data(op, grid, cfg, g2)
    assert np.max(np.abs(zeta - combined)) <= 1e-10 * max(1.0, np.max(np.abs(zeta)))

    xi = solve_source(op, grid, cfg, a * f1 + b * f2)
    combined = a * solve_source(op, grid, cfg, f1) + b * solve_source(op, grid, cfg, f2)
    assert np.max(np.abs(xi - combined)) <= 1e-10 * max(1.0, np.max(np.abs(xi)))


if __name__ == "__main__":
    test_resonant_shift_refused()
    test_sylvester_operator_residual()
    test_resolvent_identity()
    print("elliptic tests passed")
