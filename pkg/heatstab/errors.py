"""
Error Types

Every failure the library can raise derives from HeatStabError. The CLI maps
the three families onto exit codes (see EXIT_CODES); library code never
exits on its own.
"""

from typing import Optional


class HeatStabError(Exception):
    """Base class for all heatstab failures."""

    exit_code = 1


class ConfigError(HeatStabError, ValueError):
    """Invalid configuration or violated precondition."""

    exit_code = 2


class GridError(ConfigError):
    """Degenerate or malformed grid (too few nodes, non-positive lengths)."""


class DimensionError(ConfigError):
    """A Field or TraceField has the wrong length for its grid."""


class InsufficientModesError(ConfigError):
    """Too few eigenpairs were computed to certify lambda_{N+1} + mu < 0."""

    def __init__(self, computed: int, last_shifted: float):
        self.computed = computed
        self.last_shifted = last_shifted
        super().__init__(
            f"insufficient modes to certify lambda_(N+1)+mu<0: computed {computed}, "
            f"lambda_{computed}+mu = {last_shifted:.6g} >= 0; increase 'modes'"
        )


class ResonanceError(HeatStabError):
    """The shift theta = -alpha-mu sits within eps_res of an eigenvalue."""

    exit_code = 3

    def __init__(self, j: int, theta: float, margin: float, suggestion: Optional[float] = None):
        self.j = j
        self.theta = theta
        self.margin = margin
        self.suggestion = suggestion
        message = f"resonance: theta={theta:.10g} is within {margin:.3e} of lambda_{j} (j={j})"
        if suggestion is not None:
            message += f"; try alpha={suggestion:.6g}"
        super().__init__(message)


class NumericalFailure(HeatStabError):
    """A linear-algebra step failed or an identity did not hold."""

    exit_code = 4


class EigensolverError(NumericalFailure):
    """The eigensolver did not converge."""

    def __init__(self, message: str, iterations: Optional[int] = None, converged: Optional[int] = None):
        self.iterations = iterations
        self.converged = converged
        details = []
        if iterations is not None:
            details.append(f"iterations={iterations}")
        if converged is not None:
            details.append(f"converged={converged}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class UncontrollableError(NumericalFailure):
    """The truncated pair (Lambda_N, F_N) fails the Hautus test."""

    def __init__(self, cluster_eigenvalue: float, indices, min_singular: float):
        self.cluster_eigenvalue = cluster_eigenvalue
        self.indices = tuple(indices)
        self.min_singular = min_singular
        super().__init__(
            f"uncontrollable cluster at lambda+mu={cluster_eigenvalue:.6g} "
            f"(modes {', '.join(str(i + 1) for i in self.indices)}): "
            f"min singular value {min_singular:.3e}"
        )


class RiccatiError(NumericalFailure):
    """The Hamiltonian has eigenvalues on the imaginary axis."""


class SingularStepError(NumericalFailure):
    """I - dt*M is singular for the requested time step."""


EXIT_CODES = {
    "ok": 0,
    "config": ConfigError.exit_code,
    "resonance": ResonanceError.exit_code,
    "numerical": NumericalFailure.exit_code,
}
