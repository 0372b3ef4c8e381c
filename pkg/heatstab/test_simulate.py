"""
Tests for time stepping, scenario runs and trace post-processing
"""
from functools import lru_cache

import numpy as np
import pandas as pd
import pytest

from heatstab.elliptic import helmholtz_config
from heatstab.errors import ConfigError, DimensionError
from heatstab.grid import assemble_operators, build_grid
from heatstab.simulate import (
    Trace,
    energy_ratio,
    estimate_decay_rate,
    initial_state,
    initial_trace,
    run_closed_loop,
    run_observer,
    run_open_loop,
    run_output_feedback,
    step,
    step_doubling_error,
    write_trace_csv,
)
from heatstab.spectral import compute_eigenbasis, select_unstable_count
from heatstab.synthesis import (
    AssembledGenerator,
    assemble_open_loop,
    assemble_output_feedback,
    assemble_sensor_plant,
    spectral_abscissa,
    synthesize,
)

MU = 13.0
ALPHA = 1.0


@lru_cache(maxsize=None)
def pipeline(n=15, alpha=ALPHA):
    grid = build_grid(n, n, boundary_config="B")
    op = assemble_operators(grid)
    basis = compute_eigenbasis(op, grid, 8)
    selection = select_unstable_count(basis, MU)
    cfg = helmholtz_config(op, basis, -alpha - MU)
    result = synthesize(op, grid, basis, selection, cfg, alpha)
    return grid, op, basis, result


def synthetic(values, times):
    return Trace.from_columns(times, norm_w=values)


def test_decay_rate_of_exponential():
    t = np.linspace(0.0, 5.0, 501)
    fit = estimate_decay_rate(synthetic(np.exp(-2.0 * t), t), column="norm_w")
    assert fit.rate == pytest.approx(2.0, abs=1e-6)
    assert not fit.saturated
    assert fit.samples == 251


def test_decay_rate_of_oscillating_signal():
    t = np.linspace(0.0, 20.0, 2001)
    values = np.exp(-t) * (2.0 + np.sin(10.0 * t))
    fit = estimate_decay_rate(synthetic(values, t), window=0.5, column="total")
    print(f"oscillating fit: {fit.rate:.4f}")
    assert fit.rate == pytest.approx(1.0, abs=0.1)


def test_decay_rate_edge_cases():
    t = np.linspace(0.0, 1.0, 50)
    assert estimate_decay_rate(synthetic(np.full(50, 3.0), t), column="norm_w").rate == pytest.approx(0.0, abs=1e-12)

    zeros = estimate_decay_rate(synthetic(np.zeros(50), t), column="norm_w")
    assert zeros.saturated and zeros.rate == float("inf")

    with pytest.raises(ConfigError):
        estimate_decay_rate(synthetic(np.ones(15), t[:15]), window=0.5)
    with pytest.raises(ConfigError):
        estimate_decay_rate(synthetic(np.ones(50), t), window=0.0)
    with pytest.raises(ConfigError):
        estimate_decay_rate(synthetic(np.ones(50), t), column="norm_q")


def test_energy_ratio():
    t = np.linspace(0.0, 1.0, 11)
    assert energy_ratio(synthetic(np.exp(-t), t), "norm_w") == pytest.approx(np.exp(-2.0))
    assert energy_ratio(synthetic(np.zeros(11), t), "norm_w") == 0.0


def test_trace_csv_layout(tmp_path):
    t = np.array([0.0, 0.5, 1.0])
    trace = Trace.from_columns(t, outputs=np.ones((3, 2)), norm_w=[1.0, 0.5, 0.25])
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["t", "norm_w", "norm_v", "norm_p", "norm_w_err", "norm_p_err", "y_1", "y_2"]
    assert frame["norm_v"].isna().all()
    assert frame["norm_w"].iloc[-1] == pytest.approx(0.25)
    assert trace.n_outputs == 2


def test_open_loop_grows_at_first_mode_rate():
    grid, op, basis, _ = pipeline()
    trace = run_open_loop(op, grid, MU, basis.phi(1), tmax=1.0, dt=1e-2)
    expected = basis.lambdas[0] + MU
    fit = estimate_decay_rate(trace, window=0.5, column="norm_w")
    print(f"open-loop slope {-fit.rate:.4f}, lambda_1+mu {expected:.4f}")
    assert -fit.rate == pytest.approx(expected, rel=0.05)
    assert energy_ratio(trace, "norm_w") >= 10.0
    assert len(trace) == 101


def test_record_every_thins_rows():
    grid, op, basis, _ = pipeline()
    trace = run_open_loop(op, grid, MU, basis.phi(1), tmax=1.0, dt=1e-2, record_every=10)
    assert len(trace) == 11
    assert trace.times[-1] == pytest.approx(1.0)


def test_step_doubling_is_second_order():
    grid, op, basis, _ = pipeline()
    gen = assemble_open_loop(op, grid, MU)
    coarse = step_doubling_error(gen, basis.phi(1), 1e-2)
    fine = step_doubling_error(gen, basis.phi(1), 5e-3)
    assert 3.5 <= coarse / fine <= 4.5


def test_step_hand_cases():
    frozen = AssembledGenerator.from_dense(np.zeros((3, 3)))
    x = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(step(frozen, x, 0.1), x)
    assert np.allclose(step(frozen, x, 0.1, load=np.ones(3)), x + 0.1, rtol=0, atol=1e-15)

    a, dt = 3.0, 0.01
    decay = AssembledGenerator.from_dense([[-a]])
    assert step(decay, np.array([2.0]), dt)[0] == pytest.approx(2.0 / (1.0 + a * dt), rel=1e-14)
    with pytest.raises(ConfigError):
        step(decay, np.array([2.0]), 0.0)


def test_trajectories_are_linear():
    grid, op, basis, result = pipeline()
    w_a, w_b = basis.phi(1), initial_state("random", grid, seed=5)
    v_a, v_b = np.zeros(grid.nx), initial_trace("random", grid, 6)
    run = dict(tmax=1.0, dt=1e-2)
    first = run_closed_loop(result.closed, w_a, v_a, **run).final
    second = run_closed_loop(result.closed, w_b, v_b, **run).final
    both = run_closed_loop(result.closed, w_a + 2.0 * w_b, v_a + 2.0 * v_b, **run).final
    for name in ("w", "v"):
        expected = getattr(first, name) + 2.0 * getattr(second, name)
        scale = max(1.0, float(np.max(np.abs(expected))))
        assert np.max(np.abs(getattr(both, name) - expected)) <= 1e-10 * scale


def test_closed_loop_decays():
    grid, op, basis, result = pipeline()
    trace = run_closed_loop(result.closed, basis.phi(1), np.zeros(grid.nx), tmax=10.0, dt=1e-2)
    ratio = energy_ratio(trace)
    fit = estimate_decay_rate(trace)
    print(f"closed loop: energy ratio {ratio:.3e}, fitted rate {fit.rate:.4f}")
    assert ratio <= 1e-3
    assert fit.rate == pytest.approx(ALPHA, rel=0.25)
    assert trace.final.v.shape == (grid.nx,)
    with pytest.raises(ConfigError):
        run_closed_loop(result.closed, basis.phi(1), np.zeros(grid.nx + 1), tmax=1.0, dt=1e-2)


def test_observer_error_decays():
    grid, op, basis, result = pipeline()
    plant = assemble_sensor_plant(op, grid, MU, ALPHA)
    w0 = basis.phi(1)
    zero = np.zeros(grid.nx)
    trace = run_observer(
        plant, result.observer, None, w0, zero, np.zeros(grid.size), zero,
        tmax=10.0, dt=1e-2, outputs=result.parts.Bv_star,
    )
    assert trace.meta["error_consistency"] <= 1e-8
    assert energy_ratio(trace, "error") <= 1e-3
    fit = estimate_decay_rate(trace, window=0.5, column="error")
    abscissa = spectral_abscissa(result.observer)
    print(f"observer error rate {fit.rate:.4f}, |abscissa| {abs(abscissa):.4f}")
    assert fit.rate == pytest.approx(abs(abscissa), rel=0.25)
    # the plant itself is unstable
    assert trace.column("norm_w")[-1] > trace.column("norm_w")[0]
    assert trace.n_outputs == 1


def test_observer_matched_start_has_no_error():
    grid, op, basis, result = pipeline()
    plant = assemble_sensor_plant(op, grid, MU, ALPHA)
    w0 = basis.phi(1)
    p0 = initial_trace("random", grid, 3)

    def u(t):
        return np.cos(t) * np.ones(grid.nx)

    trace = run_observer(plant, result.observer, u, w0, p0, w0.copy(), p0.copy(), tmax=1.0, dt=1e-2)
    assert np.all(trace.error_norm == 0.0)


def test_observer_error_ignores_input():
    grid, op, basis, result = pipeline()
    plant = assemble_sensor_plant(op, grid, MU, ALPHA)
    zero = np.zeros(grid.nx)
    args = (basis.phi(1), zero, np.zeros(grid.size), zero)
    free = run_observer(plant, result.observer, None, *args, tmax=2.0, dt=1e-2)
    driven = run_observer(plant, result.observer, lambda t: np.full(grid.nx, np.sin(3.0 * t)), *args, tmax=2.0, dt=1e-2)
    assert np.max(np.abs(free.error_norm - driven.error_norm)) <= 1e-9
    assert np.max(np.abs(free.column("norm_w") - driven.column("norm_w"))) > 1e-6


def test_output_feedback_with_exact_estimate_matches_state_feedback():
    grid, op, basis, result = pipeline()
    gen = assemble_output_feedback(op, grid, basis, result.gains, result.cfg, ALPHA, result.parts)
    zero = np.zeros(grid.nx)
    w0 = basis.phi(1)
    combined = run_output_feedback(gen, w0, zero, zero, w0.copy(), zero, tmax=5.0, dt=1e-2)
    state = run_closed_loop(result.closed, w0, zero, tmax=5.0, dt=1e-2)
    assert np.max(np.abs(combined.column("norm_w") - state.column("norm_w"))) <= 1e-9
    assert np.max(np.abs(combined.column("norm_v") - state.column("norm_v"))) <= 1e-9
    assert np.max(combined.error_norm) <= 1e-12


def test_output_feedback_decays():
    # with alpha=1 the energy ratio at t=10 is about 3e-3
    alpha = 2.0
    grid, op, basis, result = pipeline(alpha=alpha)
    gen = assemble_output_feedback(op, grid, basis, result.gains, result.cfg, alpha, result.parts)
    zero = np.zeros(grid.nx)
    trace = run_output_feedback(
        gen, basis.phi(1), zero, zero, np.zeros(grid.size), zero,
        tmax=10.0, dt=1e-2, outputs=result.parts.Bv_star,
    )
    print(f"output feedback energy ratio {energy_ratio(trace):.3e}")
    assert energy_ratio(trace) <= 1e-3
    assert np.all(np.isfinite(trace.error_norm))


def test_initial_states(tmp_path):
    grid, op, basis, _ = pipeline()
    assert np.array_equal(initial_state("phi1", grid, basis), basis.phi(1))
    assert not np.any(initial_state("zero", grid))
    rand = initial_state("random", grid, seed=7)
    assert np.dot(grid.omega_weights * rand, rand) == pytest.approx(1.0)
    assert np.array_equal(rand, initial_state("random", grid, seed=7))

    path = tmp_path / "w0.npy"
    np.save(path, np.arange(grid.size, dtype=float))
    assert initial_state(str(path), grid)[-1] == grid.size - 1

    short = tmp_path / "short.npy"
    np.save(short, np.ones(3))
    with pytest.raises(DimensionError):
        initial_state(str(short), grid)
    with pytest.raises(ConfigError):
        initial_state("phi1", grid)


if __name__ == "__main__":
    test_decay_rate_of_exponential()
    test_open_loop_grows_at_first_mode_rate()
    test_closed_loop_decays()
    test_observer_error_decays()
    print("simulate tests passed")
