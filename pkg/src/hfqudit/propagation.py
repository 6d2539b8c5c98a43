"""Piecewise-constant evolution, ensemble fidelities and waveform files.

Evaluation over an ensemble is batched: Hamiltonians for all grid points and
steps are stacked into a ``(P, N, 8, 8)`` array and diagonalized together.
Reductions over grid points use a fixed index order so objective values do
not depend on how the work was split.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import model
from .model import ControlStep, InhomogeneityPoint, ModelConstants, TWO_PI
from .spin_algebra import DIM, UP, basis_state, is_hermitian

UNITARY_TOL = 1e-10
CSV_HEADER = ("step", "omega_rf_hz", "phi_rf_rad", "omega_uw_hz", "phi_uw_rad", "duration_s")


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ControlWaveform:
    """Sequence of piecewise-constant control steps stored column-wise.

    Amplitudes are angular frequencies (rad/s), phases radians, durations seconds.
    """

    omega_rf: np.ndarray
    phi_rf: np.ndarray
    omega_uw: np.ndarray
    phi_uw: np.ndarray
    duration: np.ndarray

    def __post_init__(self):
        cols = [_frozen(getattr(self, k)).reshape(-1) for k in
                ("omega_rf", "phi_rf", "omega_uw", "phi_uw", "duration")]
        n = len(cols[0])
        if n == 0:
            raise ValueError("a waveform needs at least one step")
        if any(len(c) != n for c in cols):
            raise ValueError("waveform columns have different lengths")
        if not np.all(np.isfinite(np.concatenate(cols))):
            raise ValueError("waveform contains non-finite values")
        if np.any(cols[4] <= 0):
            raise ValueError("step durations must be positive")
        if np.any(cols[0] < 0) or np.any(cols[2] < 0):
            raise ValueError("amplitudes must be non-negative")
        for k, c in zip(("omega_rf", "phi_rf", "omega_uw", "phi_uw", "duration"), cols):
            object.__setattr__(self, k, c)

    @classmethod
    def from_steps(cls, steps: Iterable[ControlStep]) -> "ControlWaveform":
        steps = list(steps)
        return cls(*(np.array([getattr(s, k) for s in steps], dtype=float) for k in
                     ("omega_rf", "phi_rf", "omega_uw", "phi_uw", "duration")))

    @classmethod
    def zeros(cls, n: int, dt: float) -> "ControlWaveform":
        z = np.zeros(n)
        return cls(z, z, z, z, np.full(n, dt))

    @property
    def steps(self) -> list[ControlStep]:
        return [ControlStep(*map(float, row)) for row in
                zip(self.omega_rf, self.phi_rf, self.omega_uw, self.phi_uw, self.duration)]

    def __len__(self) -> int:
        return len(self.duration)

    @property
    def total_duration(self) -> float:
        return float(np.sum(self.duration))

    def __add__(self, other: "ControlWaveform") -> "ControlWaveform":
        """Concatenate in time: ``self`` is applied first."""
        return ControlWaveform(*(np.concatenate([getattr(self, k), getattr(other, k)]) for k in
                                 ("omega_rf", "phi_rf", "omega_uw", "phi_uw", "duration")))

    def __getitem__(self, index) -> "ControlWaveform":
        if isinstance(index, int):
            index = slice(index, index + 1 if index != -1 else None)
        return ControlWaveform(self.omega_rf[index], self.phi_rf[index], self.omega_uw[index],
                               self.phi_uw[index], self.duration[index])

    def phase_shifted(self, shift: float = np.pi) -> "ControlWaveform":
        return ControlWaveform(self.omega_rf, self.phi_rf + shift, self.omega_uw,
                               self.phi_uw + shift, self.duration)

    def time_reversed(self) -> "ControlWaveform":
        return self[::-1]

    def inverse(self) -> "ControlWaveform":
        """Waveform generating ``U^dagger`` when run at the opposite detuning.

        Steps are reversed in time and every phase is advanced by pi, which
        flips the sign of both drive terms.
        """
        return self.time_reversed().phase_shifted(np.pi)

    def equals(self, other: "ControlWaveform") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in
                   ("omega_rf", "phi_rf", "omega_uw", "phi_uw", "duration"))


@dataclass(frozen=True, eq=False)
class EnsembleGrid:
    """Weighted inhomogeneity points with optional per-point target states."""

    eps_rf: np.ndarray
    eps_uw: np.ndarray
    delta: np.ndarray
    weights: np.ndarray
    targets: np.ndarray | None = None

    def __post_init__(self):
        eps_rf = _frozen(self.eps_rf).reshape(-1)
        eps_uw = _frozen(self.eps_uw).reshape(-1)
        delta = _frozen(self.delta).reshape(-1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        n = len(eps_rf)
        if n == 0 or len(eps_uw) != n or len(delta) != n or len(w) != n:
            raise ValueError("grid columns must be non-empty and of equal length")
        if np.any(w < 0) or not w.sum() > 0:
            raise ValueError("grid weights must be non-negative with positive sum")
        if np.any(eps_rf <= -1) or np.any(eps_uw <= -1):
            raise ValueError("amplitude errors must satisfy eps > -1")
        object.__setattr__(self, "eps_rf", eps_rf)
        object.__setattr__(self, "eps_uw", eps_uw)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "weights", _frozen(w / w.sum()))
        if self.targets is not None:
            t = np.array(self.targets, dtype=complex)
            if t.ndim == 1:
                t = np.broadcast_to(t, (n, len(t)))
            if t.shape != (n, DIM):
                raise ValueError(f"targets must have shape ({n}, {DIM}), got {t.shape}")
            norms = np.sum(np.abs(t) ** 2, axis=1)
            if np.max(np.abs(norms - 1)) > 1e-10:
                raise ValueError("target states must be normalized")
            object.__setattr__(self, "targets", _frozen(t, complex))

    @classmethod
    def from_points(cls, points: Sequence[InhomogeneityPoint], weights=None, targets=None):
        points = list(points)
        if weights is None:
            weights = np.ones(len(points))
        return cls([p.eps_rf for p in points], [p.eps_uw for p in points],
                   [p.delta for p in points], weights, targets)

    @classmethod
    def product(cls, eps_rf_values, eps_uw_values, delta_values, targets=None):
        """Uniformly weighted Cartesian product grid (eps_rf slowest, delta fastest)."""
        pts = list(itertools.product(eps_rf_values, eps_uw_values, delta_values))
        arr = np.array(pts, dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], np.ones(len(arr)), targets)

    @classmethod
    def single(cls, point: InhomogeneityPoint = model.NOMINAL, target=None):
        return cls.from_points([point], targets=None if target is None else [target])

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def points(self) -> list[InhomogeneityPoint]:
        return [InhomogeneityPoint(*map(float, p)) for p in zip(self.eps_rf, self.eps_uw, self.delta)]

    def with_targets(self, targets) -> "EnsembleGrid":
        return EnsembleGrid(self.eps_rf, self.eps_uw, self.delta, self.weights, targets)

    def negated_detuning(self) -> "EnsembleGrid":
        return EnsembleGrid(self.eps_rf, self.eps_uw, -self.delta, self.weights, self.targets)


def hamiltonian_stack(waveform: ControlWaveform, grid: EnsembleGrid,
                      constants: ModelConstants) -> np.ndarray:
    """Hamiltonians of every step at every grid point, shape ``(P, N, 8, 8)``."""
    _check_amplitudes(waveform, constants)
    g_rf, _ = model.rf_generators(waveform.phi_rf)
    g_uw, _ = model.uw_generators(waveform.phi_uw)
    rf = waveform.omega_rf[:, None, None] * g_rf
    uw = waveform.omega_uw[:, None, None] * g_uw
    h = ((1 + grid.eps_rf)[:, None, None, None] * rf[None]
         + (1 + grid.eps_uw)[:, None, None, None] * uw[None]
         + grid.delta[:, None, None, None] * model.detuning_generator(constants)
         + model.static_term(constants))
    return h


def _check_amplitudes(waveform: ControlWaveform, constants: ModelConstants, slack: float = 1e-9):
    if np.max(waveform.omega_rf) > constants.omega_rf_max * (1 + slack):
        raise ValueError("rf amplitude exceeds omega_rf_max")
    if np.max(waveform.omega_uw) > constants.omega_uw_max * (1 + slack):
        raise ValueError("microwave amplitude exceeds omega_uw_max")


def propagator_stack(h: np.ndarray, durations) -> np.ndarray:
    """``exp(-i H dt)`` over a stack, with ``durations`` broadcast against the leading axes."""
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * np.asarray(durations)[..., None] * w)
    return (v * phases[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def step_propagator(h: np.ndarray, dt: float) -> np.ndarray:
    """``U = exp(-i H dt)`` for a single Hermitian ``H``."""
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h):
        raise ValueError("step_propagator needs a Hermitian matrix")
    return propagator_stack(h, dt)


def propagate(waveform: ControlWaveform, point: InhomogeneityPoint = model.NOMINAL,
              constants: ModelConstants | None = None) -> np.ndarray:
    """Time-ordered product ``U_N ... U_1`` at one ensemble point."""
    constants = constants or ModelConstants()
    grid = EnsembleGrid.from_points([point])
    us = propagator_stack(hamiltonian_stack(waveform, grid, constants)[0], waveform.duration)
    total = np.eye(DIM, dtype=complex)
    for u in us:
        total = u @ total
    return total


def evolve_states(waveform: ControlWaveform, grid: EnsembleGrid, constants: ModelConstants,
                  initial=None) -> np.ndarray:
    """Final states ``U_p psi_p`` at every grid point, shape ``(P, 8)``.

    ``initial`` is a single state or one state per grid point; default |up>.
    """
    if initial is None:
        initial = basis_state(UP)
    psi = np.array(np.broadcast_to(np.asarray(initial, dtype=complex), (len(grid), DIM)))
    us = propagator_stack(hamiltonian_stack(waveform, grid, constants), waveform.duration)
    for k in range(len(waveform)):
        psi = np.einsum("pij,pj->pi", us[:, k], psi)
    return psi


def point_fidelities(waveform: ControlWaveform, grid: EnsembleGrid,
                     constants: ModelConstants) -> np.ndarray:
    if grid.targets is None:
        raise ValueError("ensemble grid has no target states")
    final = evolve_states(waveform, grid, constants)
    return np.abs(np.sum(grid.targets.conj() * final, axis=1)) ** 2


def ensemble_fidelity(waveform: ControlWaveform, grid: EnsembleGrid, constants: ModelConstants):
    """Weighted mean of ``|<psi_T|U|up>|^2`` over the grid, plus the per-point values."""
    f = point_fidelities(waveform, grid, constants)
    return weighted_mean(f, grid.weights), f


def weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    total = 0.0
    for w, v in zip(weights, values):
        total += w * v
    return float(total)


def expectation(state, op) -> float:
    """``<psi|A|psi>`` for Hermitian ``A``; raises if the result is not real."""
    state = np.asarray(state, dtype=complex)
    op = np.asarray(op, dtype=complex)
    if op.shape != (len(state), len(state)):
        raise ValueError(f"operator shape {op.shape} does not match state dimension {len(state)}")
    value = np.vdot(state, op @ state)
    if abs(value.imag) > 1e-10:
        raise ValueError(f"expectation value has imaginary part {value.imag:.3g}")
    return float(value.real)


# --- waveform files --------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def waveform_to_csv(waveform: ControlWaveform) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for k, s in enumerate(waveform.steps):
        writer.writerow([k, _fmt(s.omega_rf / TWO_PI), _fmt(s.phi_rf),
                         _fmt(s.omega_uw / TWO_PI), _fmt(s.phi_uw), _fmt(s.duration)])
    return buf.getvalue()


def waveform_from_csv(text: str) -> ControlWaveform:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"waveform CSV must start with header {','.join(CSV_HEADER)}")
    body = rows[1:]
    for i, row in enumerate(body):
        if len(row) != len(CSV_HEADER) or int(row[0]) != i:
            raise ValueError(f"malformed waveform CSV row {i + 1}: {row!r}")
    data = np.array([[float(x) for x in row[1:]] for row in body], dtype=float).reshape(-1, 5)
    return ControlWaveform(data[:, 0] * TWO_PI, data[:, 1], data[:, 2] * TWO_PI, data[:, 3], data[:, 4])


def waveform_to_json(waveform: ControlWaveform) -> dict:
    return {"steps": [{"omega_rf_hz": s.omega_rf / TWO_PI, "phi_rf_rad": s.phi_rf,
                       "omega_uw_hz": s.omega_uw / TWO_PI, "phi_uw_rad": s.phi_uw,
                       "duration_s": s.duration} for s in waveform.steps],
            "total_duration_s": waveform.total_duration}


def waveform_from_json(data: dict) -> ControlWaveform:
    steps = data["steps"]
    return ControlWaveform(
        np.array([s["omega_rf_hz"] for s in steps], dtype=float) * TWO_PI,
        [s["phi_rf_rad"] for s in steps],
        np.array([s["omega_uw_hz"] for s in steps], dtype=float) * TWO_PI,
        [s["phi_uw_rad"] for s in steps],
        [s["duration_s"] for s in steps])


def write_waveform(path, waveform: ControlWaveform) -> None:
    path = str(path)
    if path.endswith(".json"):
        with open(path, "w") as fh:
            json.dump(waveform_to_json(waveform), fh, indent=1)
            fh.write("\n")
    else:
        with open(path, "w", newline="") as fh:
            fh.write(waveform_to_csv(waveform))


def read_waveform(path) -> ControlWaveform:
    path = str(path)
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        return waveform_from_json(json.loads(text))
    return waveform_from_csv(text)


def file_normalized(waveform: ControlWaveform) -> ControlWaveform:
    """The waveform exactly as it reads back from its CSV form."""
    return waveform_from_csv(waveform_to_csv(waveform))
