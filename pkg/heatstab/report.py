"""
Report Generator

Renders the plain-text spectrum and identity-suite reports from jinja2
templates and formats the single-line simulation summary.
"""

import os
from typing import Dict, List, Optional

import numpy as np
from jinja2 import Environment, FileSystemLoader

from heatstab.grid import Grid
from heatstab.spectral import EigenBasis, GramReport, UnstableSelection, analytic_eigenvalues
from heatstab.verify import IdentityCheck


def _sci(value) -> str:
    if value is None:
        return "n/a"
    return f"{float(value):.3e}"


def _fixed(value) -> str:
    return f"{float(value):.6f}"


def _status(passed: bool) -> str:
    return "PASS" if passed else "FAIL"


def _environment() -> Environment:
    template_dir = os.path.join(os.path.dirname(__file__), "templates")
    env = Environment(loader=FileSystemLoader(template_dir), trim_blocks=True, lstrip_blocks=True)
    env.filters["sci"] = _sci
    env.filters["fixed"] = _fixed
    env.filters["status"] = _status
    return env


def render_spectrum_report(
    grid: Grid,
    basis: EigenBasis,
    selection: UnstableSelection,
    gram: List[GramReport],
    eigen_tol: float = 1e-9,
) -> str:
    analytic = analytic_eigenvalues(grid, basis.n_computed)
    modes = [
        {
            "j": j + 1,
            "lam": float(lam),
            "shifted": float(lam + selection.mu),
            "analytic": float(analytic[j]),
            "unstable": j < selection.N,
        }
        for j, lam in enumerate(basis.lambdas)
    ]
    gram_rows = [
        {
            "modes": ",".join(str(i + 1) for i in g.indices),
            "min_singular": g.min_singular,
            "status": "near singular" if g.near_singular else "ok",
        }
        for g in gram
    ]
    template = _environment().get_template("spectrum.txt.j2")
    return template.render(
        grid=grid,
        basis=basis,
        selection=selection,
        modes=modes,
        first_shifted=float(basis.lambdas[0] + selection.mu),
        max_residual=float(np.max(basis.residuals)),
        eigen_tol=eigen_tol,
        gram=gram_rows,
        sing_tol=gram[0].sing_tol if gram else None,
    )


def render_verify_report(
    grid: Grid,
    checks: List[IdentityCheck],
    mu: float,
    alpha: float,
    theta: float,
    margin: float,
    N: int,
) -> str:
    template = _environment().get_template("verify.txt.j2")
    return template.render(
        grid=grid,
        checks=checks,
        mu=mu,
        alpha=alpha,
        theta=theta,
        margin=margin,
        N=N,
        passed=sum(1 for c in checks if c.passed),
        total=len(checks),
    )


def format_summary(abscissa: float, fitted_rate: float, energy_ratio: float, extra: Optional[Dict] = None) -> str:
    parts = [f"abscissa={abscissa:.6g}", f"fitted_rate={fitted_rate:.6g}", f"energy_ratio={energy_ratio:.6e}"]
    for key, value in (extra or {}).items():
        parts.append(f"{key}={value}")
    return ", ".join(parts)


def write_report(text: str, out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}_report.txt")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)
    return path
