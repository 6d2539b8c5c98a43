"""Phase-only waveform search with both fields pinned at maximum amplitude.

The decision vector interleaves the step phases,
``(phi_rf_1, phi_uw_1, ..., phi_rf_N, phi_uw_N)``, and the objective is the
weighted ensemble fidelity of preparing each grid point's target from |up>.
Maximization uses BFGS with an inverse-Hessian update and Armijo
backtracking, restarted from several seeded random phase vectors.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import grape, model
from .model import ModelConstants
from .propagation import ControlWaveform, EnsembleGrid, ensemble_fidelity, hamiltonian_stack
from .spin_algebra import DIM, UP, basis_state

log = logging.getLogger(__name__)


def haar_random_state(dim: int = DIM, seed=None) -> np.ndarray:
    """Haar-distributed pure state (first column of a Haar unitary)."""
    rng = np.random.default_rng(seed)
    z = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return z / np.linalg.norm(z)


def _check_phases(phases) -> np.ndarray:
    phases = np.asarray(phases, dtype=float).reshape(-1)
    if len(phases) == 0 or len(phases) % 2:
        raise ValueError(f"phase vector must have even non-zero length, got {len(phases)}")
    if not np.all(np.isfinite(phases)):
        raise ValueError("phase vector contains non-finite values")
    return phases


def phase_waveform(phases, constants: ModelConstants) -> ControlWaveform:
    """Waveform with both amplitudes at their maxima and the given phases."""
    phases = _check_phases(phases)
    n = len(phases) // 2
    return ControlWaveform(np.full(n, constants.omega_rf_max), phases[0::2],
                           np.full(n, constants.omega_uw_max), phases[1::2],
                           np.full(n, constants.dt))


def _phase_derivatives(waveform: ControlWaveform, grid: EnsembleGrid) -> np.ndarray:
    _, dg_rf = model.rf_generators(waveform.phi_rf)
    _, dg_uw = model.uw_generators(waveform.phi_uw)
    d_rf = (1 + grid.eps_rf)[:, None, None, None] * (waveform.omega_rf[:, None, None] * dg_rf)[None]
    d_uw = (1 + grid.eps_uw)[:, None, None, None] * (waveform.omega_uw[:, None, None] * dg_uw)[None]
    return np.stack([d_rf, d_uw], axis=2)


def objective_and_gradient(phases, grid: EnsembleGrid, constants: ModelConstants,
                           with_gradient: bool = True):
    """Ensemble fidelity, per-point fidelities and the gradient (length 2N)."""
    if grid.targets is None:
        raise ValueError("ensemble grid has no target states")
    wf = phase_waveform(phases, constants)
    h = hamiltonian_stack(wf, grid, constants)
    dh = _phase_derivatives(wf, grid) if with_gradient else None
    init = np.broadcast_to(basis_state(UP), (len(grid), DIM))
    f, per_point, grad = grape.transfer_fidelity(h, wf.duration, init, grid.targets, grid.weights, dh)
    return f, per_point, None if grad is None else grad.reshape(-1)


def objective(phases, grid: EnsembleGrid, constants: ModelConstants) -> float:
    return objective_and_gradient(phases, grid, constants, with_gradient=False)[0]


def gradient(phases, grid: EnsembleGrid, constants: ModelConstants) -> np.ndarray:
    return objective_and_gradient(phases, grid, constants)[2]


@dataclass
class AscentTrace:
    x: np.ndarray
    value: float
    trace: list
    iterations: int
    reason: str


def bfgs_maximize(fun, x0, *, max_iter: int = 1000, target: float | None = None,
                  gtol: float = 1e-8, stall_iters: int = 50, stall_tol: float = 1e-10,
                  c1: float = 1e-4, max_backtracks: int = 40) -> AscentTrace:
    """Maximize ``fun`` (returning ``(value, grad)``) by BFGS with backtracking.

    Stops when the value reaches ``target``, the gradient norm drops below
    ``gtol``, the value improves by less than ``stall_tol`` over
    ``stall_iters`` iterations, the line search fails, or ``max_iter`` is hit.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    n = len(x)
    hinv = np.eye(n)
    trace = [float(f)]
    reason = "max_iter"
    for it in range(1, max_iter + 1):
        if target is not None and f >= target:
            reason = "target"
            break
        if np.linalg.norm(g) < gtol:
            reason = "gradient"
            break
        p = hinv @ g
        slope = float(g @ p)
        if slope <= 0:
            hinv = np.eye(n)
            p = g.copy()
            slope = float(g @ g)
        alpha = 1.0
        for _ in range(max_backtracks):
            x_new = x + alpha * p
            f_new, g_new = fun(x_new)
            if f_new >= f + c1 * alpha * slope:
                break
            alpha *= 0.5
        else:
            reason = "line_search"
            break
        s = x_new - x
        y = g - g_new  # gradient change of the minimized function -fun
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if len(trace) == 1:
                hinv = np.eye(n) * sy / float(y @ y)
            rho = 1.0 / sy
            hy = hinv @ y
            hinv = (hinv - rho * (np.outer(s, hy) + np.outer(hy, s))
                    + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
        x, f, g = x_new, f_new, g_new
        trace.append(float(f))
        if len(trace) > stall_iters and trace[-1] - trace[-1 - stall_iters] < stall_tol:
            reason = "stalled"
            break
    return AscentTrace(x, float(f), trace, len(trace) - 1, reason)


@dataclass
class OptimizationResult:
    waveform: ControlWaveform
    phases: np.ndarray
    objective_trace: list
    per_point_fidelity: np.ndarray
    seed: int
    iterations: int
    converged: bool
    wall_time: float = 0.0
    attempts: list = field(default_factory=list)

    @property
    def fidelity(self) -> float:
        return self.objective_trace[-1]

    def to_json(self) -> dict:
        """Deterministic summary (timing is reported in the run manifest instead)."""
        return {
            "fidelity": self.fidelity,
            "converged": self.converged,
            "seed": self.seed,
            "iterations": self.iterations,
            "n_steps": len(self.waveform),
            "total_duration_s": self.waveform.total_duration,
            "phases": [float(p) for p in self.phases],
            "objective_trace": [float(v) for v in self.objective_trace],
            "per_point_fidelity": [float(v) for v in self.per_point_fidelity],
            "attempts": self.attempts,
        }


def start_seeds(seed: int, starts: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(starts)


def _run_start(args):
    index, seq, x0, grid, constants, n_steps, settings = args
    if x0 is None:
        x0 = np.random.default_rng(seq).uniform(0.0, 2 * np.pi, size=2 * n_steps)

    def fun(x):
        f, _, g = objective_and_gradient(x, grid, constants)
        return f, g

    res = bfgs_maximize(fun, x0, **settings)
    return index, res


def optimize_phases(grid: EnsembleGrid, constants: ModelConstants | None = None, *,
                    n_steps: int | None = None, duration: float | None = None,
                    init=None, seed: int = 0, starts: int = 10, target_fidelity: float = 0.99,
                    max_iter: int = 1000, gtol: float = 1e-8, stop_at_target: bool = True,
                    threads: int = 1) -> OptimizationResult:
    """Multi-start phase optimization; returns the best attempt.

    ``n_steps`` defaults to ``round(duration / dt)``.  With ``init`` given a
    single start from that phase vector is run.  ``stop_at_target`` ends each
    ascent as soon as the objective reaches ``target_fidelity``.
    """
    constants = constants or ModelConstants()
    t0 = time.perf_counter()
    if init is not None:
        init = _check_phases(init)
        n_steps = len(init) // 2
    elif n_steps is None:
        if duration is None:
            raise ValueError("give n_steps or duration")
        n_steps = int(round(duration / constants.dt))
    settings = dict(max_iter=max_iter, gtol=gtol,
                    target=target_fidelity if stop_at_target else None)
    seqs = start_seeds(seed, starts)
    if init is not None:
        jobs = [(0, seqs[0], init, grid, constants, n_steps, settings)]
    else:
        jobs = [(i, s, None, grid, constants, n_steps, settings) for i, s in enumerate(seqs)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_start, jobs))
    else:
        outcomes = [_run_start(j) for j in jobs]
    outcomes.sort(key=lambda r: r[0])
    attempts = [{"start": i, "fidelity": r.value, "iterations": r.iterations, "stop": r.reason}
                for i, r in outcomes]
    for a in attempts:
        log.info("start %d: fidelity %.6f after %d iterations (%s)",
                 a["start"], a["fidelity"], a["iterations"], a["stop"])
    best_index, best = max(outcomes, key=lambda r: (r[1].value, -r[0]))
    wf = phase_waveform(best.x, constants)
    _, per_point = ensemble_fidelity(wf, grid, constants)
    return OptimizationResult(
        waveform=wf, phases=best.x, objective_trace=best.trace, per_point_fidelity=per_point,
        seed=seed, iterations=best.iterations, converged=best.value >= target_fidelity,
        wall_time=time.perf_counter() - t0, attempts=attempts)
