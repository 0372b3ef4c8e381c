"""
Simulation Module

Backward-Euler integration of the assembled generators and the time series
they produce. A run keeps one sparse LU factorization of (I - dt M) per
(generator, dt) pair; external inputs enter as

    x_(k+1) = (I - dt M)^-1 (x_k + dt B u(t_(k+1))).
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from heatstab.errors import ConfigError, NumericalFailure, SingularStepError
from heatstab.grid import DiscreteOperator, Grid, check_field, check_trace
from heatstab.spectral import EigenBasis
from heatstab.synthesis import AssembledGenerator, assemble_observer_composition, assemble_open_loop

logger = logging.getLogger(__name__)

NORM_COLUMNS = ["norm_w", "norm_v", "norm_p", "norm_w_err", "norm_p_err"]
ERROR_COLUMNS = ["norm_w_err", "norm_p_err"]
CSV_FLOAT_FORMAT = "%.12e"
UNDERFLOW_FLOOR = 1e-300
CONSISTENCY_TOL = 1e-8


@dataclass
class SimState:
    """Scenario state at one instant; absent components are None."""

    t: float
    w: np.ndarray
    v: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    w_hat: Optional[np.ndarray] = None
    p_hat: Optional[np.ndarray] = None


@dataclass(frozen=True)
class DecayFit:
    rate: float
    saturated: bool
    samples: int


class Trace:
    """
    Time series of state norms and sensor outputs.

    Columns: t, norm_w, norm_v, norm_p, norm_w_err, norm_p_err, y_1..y_N.
    Components a scenario does not have are NaN (empty in CSV).
    """

    def __init__(self, frame: pd.DataFrame, final: Optional[SimState] = None, meta: Optional[Dict] = None):
        self.frame = frame
        self.final = final
        self.meta = dict(meta or {})

    @classmethod
    def from_columns(cls, times, n_outputs: int = 0, outputs=None, **columns) -> "Trace":
        times = np.asarray(times, dtype=float)
        data = {"t": times}
        for name in NORM_COLUMNS:
            values = columns.get(name)
            data[name] = np.full(times.shape, np.nan) if values is None else np.asarray(values, dtype=float)
        if outputs is not None:
            outputs = np.asarray(outputs, dtype=float).reshape(times.size, -1)
            n_outputs = max(n_outputs, outputs.shape[1])
        for i in range(n_outputs):
            if outputs is not None and i < outputs.shape[1]:
                data[f"y_{i + 1}"] = outputs[:, i]
            else:
                data[f"y_{i + 1}"] = np.full(times.shape, np.nan)
        return cls(pd.DataFrame(data))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def times(self) -> np.ndarray:
        return self.frame["t"].to_numpy()

    @property
    def n_outputs(self) -> int:
        return sum(1 for c in self.frame.columns if c.startswith("y_"))

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy()

    @property
    def total_norm(self) -> np.ndarray:
        """Product-space norm over every recorded component."""
        squares = self.frame[NORM_COLUMNS].fillna(0.0) ** 2
        return np.sqrt(squares.sum(axis=1).to_numpy())

    @property
    def error_norm(self) -> np.ndarray:
        squares = self.frame[ERROR_COLUMNS].fillna(0.0) ** 2
        return np.sqrt(squares.sum(axis=1).to_numpy())

    def to_frame(self) -> pd.DataFrame:
        return self.frame.copy()

    def to_csv(self, path) -> None:
        write_trace_csv(self, path)


def write_trace_csv(trace: Trace, path) -> None:
    trace.frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, na_rep="")


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _step_factor(gen: AssembledGenerator, dt: float):
    matrix = (sp.identity(gen.size, format="csc") - dt * gen.M).tocsc()
    try:
        factor = splu(matrix)
    except RuntimeError as exc:
        raise SingularStepError(f"I - dt*M is singular for dt={dt:g} ({gen.name or 'generator'}): {exc}") from exc
    logger.debug("factored I - dt*M for %s at dt=%g", gen.name or "generator", dt)
    return factor


def step(gen: AssembledGenerator, state: np.ndarray, dt: float, load: Optional[np.ndarray] = None) -> np.ndarray:
    """
    One backward-Euler step x <- (I - dt M)^-1 (x + dt * load).

    The factorization is cached per (gen, dt).
    """
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    factor = _step_factor(gen, float(dt))
    rhs = np.asarray(state, dtype=float)
    if load is not None:
        rhs = rhs + dt * load
    x = factor.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise NumericalFailure(f"non-finite state after step of {gen.name or 'generator'}")
    return x


def step_doubling_error(gen: AssembledGenerator, state: np.ndarray, dt: float) -> float:
    """Norm of (one step of dt) - (two steps of dt/2); O(dt^2) for smooth data."""
    full = step(gen, state, dt)
    half = step(gen, step(gen, state, dt / 2), dt / 2)
    return gen.norm(full - half)


def _step_count(tmax: float, dt: float) -> int:
    if not tmax > 0:
        raise ConfigError(f"tmax must be positive, got {tmax}")
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    steps = int(round(tmax / dt))
    if steps < 1:
        raise ConfigError(f"tmax={tmax} is shorter than one step of dt={dt}")
    return steps


def _block_norm(gen: AssembledGenerator, x: np.ndarray, name: str) -> float:
    sl = gen.block_map[name]
    return float(np.sqrt(np.dot(gen.weights[sl] * x[sl], x[sl])))


def _recorded(k: int, steps: int, record_every: int) -> bool:
    return k == 0 or k == steps or k % max(1, int(record_every)) == 0


class _Recorder:
    def __init__(self, n_outputs: int):
        self.rows: Dict[str, List[float]] = {"t": []}
        for name in NORM_COLUMNS:
            self.rows[name] = []
        self.n_outputs = n_outputs
        self.outputs: List[np.ndarray] = []

    def add(self, t: float, outputs: Optional[np.ndarray] = None, **norms) -> None:
        self.rows["t"].append(t)
        for name in NORM_COLUMNS:
            self.rows[name].append(norms.get(name, np.nan))
        if self.n_outputs:
            if outputs is None:
                outputs = np.full(self.n_outputs, np.nan)
            self.outputs.append(np.asarray(outputs, dtype=float))

    def trace(self, final: Optional[SimState] = None, meta: Optional[Dict] = None) -> Trace:
        outputs = np.vstack(self.outputs) if self.n_outputs else None
        out = Trace.from_columns(self.rows["t"], n_outputs=self.n_outputs, outputs=outputs, **self.rows_without_t())
        out.final = final
        out.meta = dict(meta or {})
        return out

    def rows_without_t(self) -> Dict[str, List[float]]:
        return {k: v for k, v in self.rows.items() if k != "t"}


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


def run_open_loop(
    op: DiscreteOperator,
    grid: Grid,
    mu: float,
    w0: np.ndarray,
    tmax: float,
    dt: float,
    record_every: int = 1,
    n_outputs: int = 0,
) -> Trace:
    """Uncontrolled plant w_t = (A_h + mu) w."""
    gen = assemble_open_loop(op, grid, mu)
    steps = _step_count(tmax, dt)
    x = check_field(w0, grid, "w0").copy()
    rec = _Recorder(n_outputs)
    rec.add(0.0, norm_w=_block_norm(gen, x, "w"))
    for k in range(1, steps + 1):
        x = step(gen, x, dt)
        if _recorded(k, steps, record_every):
            rec.add(k * dt, norm_w=_block_norm(gen, x, "w"))
    return rec.trace(final=SimState(t=steps * dt, w=x))


def run_closed_loop(
    closed: AssembledGenerator,
    w0: np.ndarray,
    v0: np.ndarray,
    tmax: float,
    dt: float,
    record_every: int = 1,
    n_outputs: int = 0,
) -> Trace:
    """State-feedback closed loop over (w, v)."""
    steps = _step_count(tmax, dt)
    x = np.concatenate([np.asarray(w0, dtype=float), np.asarray(v0, dtype=float)])
    if x.size != closed.size:
        raise ConfigError(f"initial state has size {x.size}, generator expects {closed.size}")
    rec = _Recorder(n_outputs)

    def record(t, state):
        rec.add(t, norm_w=_block_norm(closed, state, "w"), norm_v=_block_norm(closed, state, "v"))

    record(0.0, x)
    for k in range(1, steps + 1):
        x = step(closed, x, dt)
        if _recorded(k, steps, record_every):
            record(k * dt, x)
    parts = closed.split(x)
    return rec.trace(final=SimState(t=steps * dt, w=parts["w"], v=parts["v"]))


def run_observer(
    plant_gen: AssembledGenerator,
    obs_gen: AssembledGenerator,
    u_signal: Optional[Callable[[float], np.ndarray]],
    w0: np.ndarray,
    p0: np.ndarray,
    w_hat0: np.ndarray,
    p_hat0: np.ndarray,
    tmax: float,
    dt: float,
    record_every: int = 1,
    outputs: Optional[np.ndarray] = None,
    consistency_tol: float = CONSISTENCY_TOL,
) -> Trace:
    """
    Plant with sensor and observer driven by the same input.

    The coupled system runs in (w, p, w_hat, p_hat) coordinates. The error
    generator is integrated alongside from the initial mismatch; the recorded
    error norms come from that autonomous run, and the coupled run's
    x - x_hat must agree with it to consistency_tol relative to the state size.

    Args:
        outputs: optional (N, nx) matrix Bv*; records y = Bv* p
    """
    steps = _step_count(tmax, dt)
    comp = assemble_observer_composition(plant_gen, obs_gen)
    w0 = np.asarray(w0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    x = np.concatenate([w0, p0, np.asarray(w_hat0, dtype=float), np.asarray(p_hat0, dtype=float)])
    if x.size != comp.size:
        raise ConfigError(f"initial state has size {x.size}, observer system expects {comp.size}")
    n = plant_gen.size
    e = x[:n] - x[n:]
    n_outputs = 0 if outputs is None else outputs.shape[0]
    rec = _Recorder(n_outputs)
    worst = 0.0

    def record(t, state, err):
        y = outputs @ state[comp.block_map["p"]] if outputs is not None else None
        rec.add(
            t,
            outputs=y,
            norm_w=_block_norm(comp, state, "w"),
            norm_p=_block_norm(comp, state, "p"),
            norm_w_err=_block_norm(obs_gen, err, "w"),
            norm_p_err=_block_norm(obs_gen, err, "p"),
        )

    record(0.0, x, e)
    for k in range(1, steps + 1):
        t = k * dt
        load = None
        if u_signal is not None and comp.input_matrix is not None:
            u = np.asarray(u_signal(t), dtype=float)
            load = comp.input_matrix @ u
        x = step(comp, x, dt, load)
        e = step(obs_gen, e, dt)
        scale = max(1.0, float(np.max(np.abs(x))))
        worst = max(worst, float(np.max(np.abs((x[:n] - x[n:]) - e))) / scale)
        if _recorded(k, steps, record_every):
            record(t, x, e)

    if worst > consistency_tol:
        raise NumericalFailure(f"observer error trajectories disagree: {worst:.3e} > {consistency_tol:.1e}")
    parts = comp.split(x)
    final = SimState(t=steps * dt, w=parts["w"], p=parts["p"], w_hat=parts["w_hat"], p_hat=parts["p_hat"])
    return rec.trace(final=final, meta={"error_consistency": worst})


def run_output_feedback(
    gen: AssembledGenerator,
    w0: np.ndarray,
    v0: np.ndarray,
    p0: np.ndarray,
    w_hat0: np.ndarray,
    p_hat0: np.ndarray,
    tmax: float,
    dt: float,
    record_every: int = 1,
    outputs: Optional[np.ndarray] = None,
) -> Trace:
    """Observer-based output feedback over (w, v, p, w_hat, p_hat)."""
    steps = _step_count(tmax, dt)
    x = np.concatenate([np.asarray(a, dtype=float) for a in (w0, v0, p0, w_hat0, p_hat0)])
    if x.size != gen.size:
        raise ConfigError(f"initial state has size {x.size}, generator expects {gen.size}")
    bm = gen.block_map
    wsl, psl, whsl, phsl = bm["w"], bm["p"], bm["w_hat"], bm["p_hat"]
    w_weights = gen.weights[wsl]
    p_weights = gen.weights[psl]
    n_outputs = 0 if outputs is None else outputs.shape[0]
    rec = _Recorder(n_outputs)

    def record(t, state):
        dw = state[wsl] - state[whsl]
        dp = state[psl] - state[phsl]
        rec.add(
            t,
            outputs=outputs @ state[psl] if outputs is not None else None,
            norm_w=_block_norm(gen, state, "w"),
            norm_v=_block_norm(gen, state, "v"),
            norm_p=_block_norm(gen, state, "p"),
            norm_w_err=float(np.sqrt(np.dot(w_weights * dw, dw))),
            norm_p_err=float(np.sqrt(np.dot(p_weights * dp, dp))),
        )

    record(0.0, x)
    for k in range(1, steps + 1):
        x = step(gen, x, dt)
        if _recorded(k, steps, record_every):
            record(k * dt, x)
    parts = gen.split(x)
    final = SimState(
        t=steps * dt, w=parts["w"], v=parts["v"], p=parts["p"], w_hat=parts["w_hat"], p_hat=parts["p_hat"]
    )
    return rec.trace(final=final)


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------


def _series(trace: Trace, column: str) -> np.ndarray:
    if column == "total":
        return trace.total_norm
    if column == "error":
        return trace.error_norm
    if column not in trace.frame.columns:
        raise ConfigError(f"trace has no column '{column}'")
    return trace.column(column)


def estimate_decay_rate(trace: Trace, window: float = 0.5, column: str = "total") -> DecayFit:
    """
    Least-squares decay rate of log(norm) over the final `window` fraction of samples.

    Args:
        trace: the run to fit
        window: fraction of samples in the fitted tail, in (0, 1]
        column: "total", "error", or a trace column name

    Returns:
        DecayFit; rate = -slope, or +inf with saturated=True when the tail
        has reached numerical zero
    """
    if not 0 < window <= 1:
        raise ConfigError(f"window must lie in (0, 1], got {window}")
    values = _series(trace, column)
    times = trace.times
    start = int(np.floor(len(values) * (1.0 - window)))
    tail = values[start:]
    tail_t = times[start:]
    if tail.size < 10:
        raise ConfigError(f"decay fit needs at least 10 samples in the tail window, got {tail.size}")
    if np.any(~np.isfinite(tail)) or np.any(tail <= UNDERFLOW_FLOOR):
        return DecayFit(rate=float("inf"), saturated=True, samples=int(tail.size))
    slope = np.polyfit(tail_t, np.log(tail), 1)[0]
    return DecayFit(rate=float(-slope), saturated=False, samples=int(tail.size))


def energy_ratio(trace: Trace, column: str = "total") -> float:
    """(||x(tmax)|| / ||x(0)||)^2."""
    values = _series(trace, column)
    start, end = float(values[0]), float(values[-1])
    if start == 0.0:
        return 0.0 if end == 0.0 else float("inf")
    return (end / start) ** 2


def initial_state(
    kind: str,
    grid: Grid,
    basis: Optional[EigenBasis] = None,
    seed: int = 0,
) -> np.ndarray:
    """
    Initial Field for a run.

    Args:
        kind: "phi1", "random" (seeded, unit Omega norm), "zero", or a path to
            a .npy or CSV file with nx*ny values in Field order
    """
    if kind == "phi1":
        if basis is None:
            raise ConfigError("initial=phi1 needs an eigenbasis")
        return np.array(basis.phi(1))
    if kind == "zero":
        return np.zeros(grid.size)
    if kind == "random":
        rng = np.random.default_rng(seed)
        values = rng.standard_normal(grid.size)
        return values / np.sqrt(np.dot(grid.omega_weights * values, values))
    try:
        if str(kind).endswith(".npy"):
            values = np.load(kind)
        else:
            values = pd.read_csv(kind, header=None).to_numpy()
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise ConfigError(f"cannot read initial state '{kind}': {exc}") from exc
    return check_field(np.asarray(values, dtype=float).ravel(), grid, "initial state")


def initial_trace(kind: str, grid: Grid, seed: int = 0) -> np.ndarray:
    if kind == "zero":
        return np.zeros(grid.nx)
    if kind == "random":
        rng = np.random.default_rng(seed)
        values = rng.standard_normal(grid.nx)
        return check_trace(values / np.sqrt(np.dot(grid.gamma1_weights * values, values)), grid)
    raise ConfigError(f"unknown trace initializer '{kind}'")
