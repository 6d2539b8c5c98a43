"""Spatially addressed preparation with a detuning gradient.

A light-shift profile ``D(x) = D0 (1 - exp(-|x/a|^m))`` splits the cloud
into a near-resonant region and a region detuned by about ``D0``.  One
phase-only waveform is optimized to prepare a different target in each
region, with a small spread of detunings around each region's centre.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelConstants, TWO_PI
from .optimizer import OptimizationResult, objective, optimize_phases
from .propagation import ControlWaveform, EnsembleGrid, evolve_states
from .spin_algebra import check_state, ket, normalize

PSI1 = normalize(ket(3, -3) + ket(3, 3))
PSI2 = ket(3, 0)


@dataclass(frozen=True)
class DetuningProfile:
    delta0: float = TWO_PI * 300.0
    a: float = 0.5e-3
    m: int = 8

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("profile width a must be positive")
        if self.m < 2 or self.m % 2:
            raise ValueError("profile exponent m must be an even integer >= 2")


def detuning_at(x, profile: DetuningProfile = DetuningProfile()):
    """Detuning (rad/s) at position ``x`` (m); negative x uses |x/a|."""
    x = np.asarray(x, dtype=float)
    return profile.delta0 * -np.expm1(-np.abs(x / profile.a) ** profile.m)


@dataclass(frozen=True)
class RegionTargets:
    """Target per region; region k is centred on ``centers[k]`` (rad/s)."""

    states: tuple = (PSI1, PSI2)
    centers: tuple = (0.0, TWO_PI * 300.0)
    offsets: tuple = (0.0, TWO_PI * 10.0, -TWO_PI * 10.0)

    def __post_init__(self):
        if len(self.states) != len(self.centers) or len(self.states) < 2:
            raise ValueError("need one centre detuning per target and at least two regions")
        object.__setattr__(self, "states", tuple(check_state(s) for s in self.states))

    def grid(self) -> EnsembleGrid:
        deltas, targets = [], []
        for state, centre in zip(self.states, self.centers):
            for off in self.offsets:
                deltas.append(centre + off)
                targets.append(state)
        n = len(deltas)
        return EnsembleGrid(np.zeros(n), np.zeros(n), deltas, np.ones(n), targets)


def spatial_objective(phases, targets: RegionTargets = RegionTargets(),
                      constants: ModelConstants | None = None) -> float:
    """Mean preparation fidelity over all region/offset points."""
    return objective(phases, targets.grid(), constants or ModelConstants())


def optimize_tomography(targets: RegionTargets = RegionTargets(),
                        constants: ModelConstants | None = None, *, duration: float = 5e-3,
                        **kwargs) -> OptimizationResult:
    constants = constants or ModelConstants()
    return optimize_phases(targets.grid(), constants, duration=duration, **kwargs)


def fz_operator(constants: ModelConstants | None = None) -> np.ndarray:
    """Fz on the 8D space: m on |3,m>, and m_up * g_r on |up>."""
    constants = constants or ModelConstants()
    diag = np.append(np.arange(-3, 4, dtype=float), constants.m_up * constants.g_r)
    return np.diag(diag).astype(complex)


@dataclass
class ProfileTable:
    x_m: np.ndarray
    delta_hz: np.ndarray
    fz: np.ndarray
    fz2: np.ndarray
    fid: np.ndarray  # (positions, regions)
    columns: tuple = field(default=("x_m", "delta_hz", "fz", "fz2"))

    def rows(self):
        for i in range(len(self.x_m)):
            yield (self.x_m[i], self.delta_hz[i], self.fz[i], self.fz2[i], *self.fid[i])

    def header(self) -> tuple:
        return self.columns + tuple(f"fid{k + 1}" for k in range(self.fid.shape[1]))


def evaluate_profile(waveform: ControlWaveform, positions, profile: DetuningProfile = DetuningProfile(),
                     constants: ModelConstants | None = None,
                     targets: RegionTargets = RegionTargets()) -> ProfileTable:
    """Prepared state ``U(D(x))|up>`` at each position and its Fz moments."""
    constants = constants or ModelConstants()
    x = np.asarray(positions, dtype=float)
    if np.any(np.diff(x) < 0):
        raise ValueError("positions must be sorted")
    delta = detuning_at(x, profile)
    n = len(x)
    grid = EnsembleGrid(np.zeros(n), np.zeros(n), delta, np.ones(n))
    psi = evolve_states(waveform, grid, constants)
    fz = fz_operator(constants)
    d = np.real(np.diag(fz))
    pops = np.abs(psi) ** 2
    m1 = pops @ d
    m2 = pops @ d ** 2
    fids = np.stack([np.abs(psi @ np.conj(t)) ** 2 for t in targets.states], axis=1)
    return ProfileTable(x, delta / TWO_PI, m1, m2, fids)


def default_positions(n: int = 201, x_max: float = 1e-3) -> np.ndarray:
    return np.linspace(0.0, x_max, n)
