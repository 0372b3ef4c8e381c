"""
heatstab - Command Line Orchestrator

Runs the pipeline behind each subcommand:
1. Load and validate configuration
2. Build the grid and operators
3. Compute the eigenbasis and the unstable count
4. Check resonance and synthesize the controller (verify, simulate)
5. Emit the report, trace CSV and summary line

Usage:
    python -m heatstab spectrum --config run.env
    python -m heatstab verify --config run.env --set mu=35
    python -m heatstab simulate --config run.env --scenario observer --out results/

Exit codes: 0 success, 2 configuration error, 3 resonance, 4 numerical failure.
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from heatstab.config import Config, load_config
from heatstab.elliptic import HelmholtzConfig, helmholtz_config
from heatstab.errors import ConfigError, HeatStabError, NumericalFailure, ResonanceError
from heatstab.grid import DiscreteOperator, Grid, assemble_operators, build_grid
from heatstab.report import format_summary, render_spectrum_report, render_verify_report, write_report
from heatstab.simulate import (
    energy_ratio,
    estimate_decay_rate,
    initial_state,
    initial_trace,
    run_closed_loop,
    run_observer,
    run_open_loop,
    run_output_feedback,
    step_doubling_error,
    write_trace_csv,
)
from heatstab.spectral import (
    EigenBasis,
    UnstableSelection,
    compute_eigenbasis,
    select_unstable_count,
    suggest_alpha,
    trace_gram_report,
)
from heatstab.synthesis import (
    SynthesisResult,
    assemble_output_feedback,
    assemble_sensor_plant,
    spectral_abscissa,
    synthesize,
)
from heatstab.verify import Tolerances, run_identity_suite

logger = logging.getLogger("heatstab")

SCENARIOS = ("open", "closed", "observer", "output-feedback")


@dataclass(frozen=True, eq=False)
class Setup:
    config: Config
    grid: Grid
    op: DiscreteOperator
    basis: EigenBasis
    selection: UnstableSelection


@dataclass(frozen=True)
class SimulationSummary:
    scenario: str
    abscissa: float
    fitted_rate: float
    energy_ratio: float
    csv_path: str
    line: str
    saturated: bool = False


def prepare(config: Config) -> Setup:
    """Grid, operators, eigenbasis and unstable count for a config."""
    grid = build_grid(config.nx, config.ny, config.Lx, config.Ly, config.boundary_config)
    op = assemble_operators(grid)
    basis = compute_eigenbasis(op, grid, config.modes, method=config.eigensolver, cluster_tol=config.cluster_tol)
    logger.info("%d eigenpairs on %dx%d grid (config %s)", basis.n_computed, grid.nx, grid.ny, grid.boundary_config)
    selection = select_unstable_count(basis, config.mu)
    logger.info("mu=%g gives N=%d, margin %.6g", config.mu, selection.N, selection.margin)
    return Setup(config=config, grid=grid, op=op, basis=basis, selection=selection)


def resonance_checked(setup: Setup) -> HelmholtzConfig:
    """Validates theta = -alpha-mu; the raised error carries a suggested alpha."""
    config = setup.config
    try:
        return helmholtz_config(setup.op, setup.basis, config.theta, config.eps_res)
    except ResonanceError as exc:
        suggestion = suggest_alpha(setup.basis, config.mu)
        raise ResonanceError(exc.j, exc.theta, exc.margin, suggestion) from None


def synthesize_controller(setup: Setup) -> SynthesisResult:
    config = setup.config
    cfg = resonance_checked(setup)
    result = synthesize(
        setup.op,
        setup.grid,
        setup.basis,
        setup.selection,
        cfg,
        config.alpha,
        lqr_q=config.lqr_q,
        lqr_r=config.lqr_r,
        rank_tol=config.rank_tol,
        pole_margin=config.pole_margin,
    )
    logger.info("controller synthesized (alpha=%g, theta=%g)", config.alpha, config.theta)
    return result


def cmd_spectrum(config: Config, out: Optional[str] = None) -> str:
    setup = prepare(config)
    gram = trace_gram_report(setup.basis, setup.grid, config.sing_tol)
    text = render_spectrum_report(setup.grid, setup.basis, setup.selection, gram)
    if out:
        write_report(text, out, "spectrum")
    return text


def cmd_verify(config: Config, out: Optional[str] = None) -> Tuple[str, bool]:
    setup = prepare(config)
    result = synthesize_controller(setup)
    checks = run_identity_suite(
        setup.op,
        setup.grid,
        setup.basis,
        setup.selection,
        result,
        Tolerances(sing_tol=config.sing_tol),
        seed=config.seed,
    )
    text = render_verify_report(
        setup.grid,
        checks,
        mu=config.mu,
        alpha=config.alpha,
        theta=config.theta,
        margin=result.cfg.resonance_margin,
        N=setup.selection.N,
    )
    if out:
        write_report(text, out, "verify")
    return text, all(c.passed for c in checks)


def _observer_start(config: Config, grid: Grid, w0, p0):
    if config.observer_init == "matched":
        return w0.copy(), p0.copy()
    if config.observer_init == "random":
        return initial_state("random", grid, seed=config.seed + 1), initial_trace("random", grid, config.seed + 2)
    return initial_state("zero", grid), initial_trace("zero", grid)


def cmd_simulate(config: Config, scenario: str = "closed", out: Optional[str] = None) -> SimulationSummary:
    """
    Runs one scenario, writes trace_<scenario>.csv and returns the summary.
    """
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario '{scenario}' (expected one of {', '.join(SCENARIOS)})")
    setup = prepare(config)
    grid, op, basis = setup.grid, setup.op, setup.basis
    w0 = initial_state(config.initial, grid, basis, config.seed)
    zero_trace = initial_trace("zero", grid)
    run_args = dict(tmax=config.tmax, dt=config.dt, record_every=config.record_every)
    # y_1..y_N columns are written empty when nothing is measured
    n_outputs = setup.selection.N

    if scenario == "open":
        trace = run_open_loop(op, grid, config.mu, w0, n_outputs=n_outputs, **run_args)
        abscissa = float(basis.lambdas[0] + config.mu)
        column = "norm_w"
    else:
        result = synthesize_controller(setup)
        outputs = result.parts.Bv_star
        if scenario == "closed":
            abscissa = spectral_abscissa(result.closed)
            if logger.isEnabledFor(logging.DEBUG):
                start = np.concatenate([w0, zero_trace])
                logger.debug("step-doubling error at t=0: %.3e", step_doubling_error(result.closed, start, config.dt))
            trace = run_closed_loop(result.closed, w0, zero_trace, n_outputs=n_outputs, **run_args)
            column = "total"
        elif scenario == "observer":
            plant = assemble_sensor_plant(op, grid, config.mu, config.alpha)
            w_hat0, p_hat0 = _observer_start(config, grid, w0, zero_trace)
            abscissa = spectral_abscissa(result.observer)
            trace = run_observer(
                plant, result.observer, None, w0, zero_trace, w_hat0, p_hat0, outputs=outputs, **run_args
            )
            column = "error"
        else:
            gen = assemble_output_feedback(op, grid, basis, result.gains, result.cfg, config.alpha, result.parts)
            w_hat0, p_hat0 = _observer_start(config, grid, w0, zero_trace)
            abscissa = spectral_abscissa(gen)
            trace = run_output_feedback(
                gen, w0, zero_trace, zero_trace, w_hat0, p_hat0, outputs=outputs, **run_args
            )
            column = "total"

    out_dir = out or "."
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"trace_{scenario}.csv")
    write_trace_csv(trace, csv_path)
    logger.info("wrote %s (%d rows)", csv_path, len(trace))

    ratio = energy_ratio(trace, column)
    fit = estimate_decay_rate(trace, config.window, column)
    if fit.saturated:
        logger.warning("norms reached numerical zero in the fit window; rate reported as inf")
    line = format_summary(abscissa, fit.rate, ratio)
    return SimulationSummary(
        scenario=scenario,
        abscissa=abscissa,
        fitted_rate=fit.rate,
        energy_ratio=ratio,
        csv_path=csv_path,
        line=line,
        saturated=fit.saturated,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heatstab",
        description="Boundary stabilization and observation of the unstable heat equation on a rectangle",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="flat key=value configuration file")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a setting"
    )
    common.add_argument("--out", "-o", help="output directory for reports and traces")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("spectrum", parents=[common], help="eigenvalues, unstable count and Gamma1 Gram certificates")
    sub.add_parser("verify", parents=[common], help="run the discrete identity suite")
    sim = sub.add_parser("simulate", parents=[common], help="time-integrate a scenario and write its trace")
    sim.add_argument("--scenario", choices=SCENARIOS, default="closed")
    return parser


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="[%(levelname)s] %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Main execution function."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    load_dotenv()

    try:
        config = load_config(args.config, args.overrides)
        if args.command == "spectrum":
            print(cmd_spectrum(config, args.out))
        elif args.command == "verify":
            text, passed = cmd_verify(config, args.out)
            print(text)
            if not passed:
                logger.error("identity suite failed")
                return NumericalFailure.exit_code
        else:
            summary = cmd_simulate(config, args.scenario, args.out)
            print(summary.line)
    except ConfigError as exc:
        logger.error("%s", exc)
        return ConfigError.exit_code
    except ResonanceError as exc:
        logger.error("%s", exc)
        return ResonanceError.exit_code
    except NumericalFailure as exc:
        logger.error("%s", exc)
        return NumericalFailure.exit_code
    except HeatStabError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        # scipy.linalg raises the same class
        logger.error("linear algebra failure: %s", exc)
        return NumericalFailure.exit_code

    return 0


if __name__ == "__main__":
    sys.exit(main())
