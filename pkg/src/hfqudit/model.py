"""Rotating-frame control Hamiltonian of the 8-level qudit.

One piecewise-constant step at one ensemble member is

    H = -2 W_rf (1+e_rf) (-cos p_rf Fx + sin p_rf Fy)          (F=3 block)
        + W_uw/2 (1+e_uw) (cos p_uw sx - sin p_uw sy)           (pseudospin)
        + D g_r m_up |up><up| - D Fz                            (detuning)

with hbar = 1 and every frequency in rad/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spin_algebra import DIM, UP, lower_ops_8d, pseudospin_ops_8d

TWO_PI = 2.0 * np.pi

# 133Cs ground state, Steck convention H = mu_B (g_J J + g_I I).B
CS_NUCLEAR_SPIN = 3.5
ELECTRON_G = 2.00231930436256  # |g_s|, CODATA
CS_G_I = -0.00039885395  # g_I in units of mu_B


def lande_g_f(f: float, g_j: float = ELECTRON_G, g_i: float = CS_G_I,
              i: float = CS_NUCLEAR_SPIN, j: float = 0.5) -> float:
    """Hyperfine Landé factor g_F in the linear Zeeman regime."""
    ff, ii, jj = f * (f + 1), i * (i + 1), j * (j + 1)
    return g_j * (ff - ii + jj) / (2 * ff) + g_i * (ff + ii - jj) / (2 * ff)


def cesium_g_ratio() -> float:
    """|g_+ / g_-| for the Cs F=4 and F=3 manifolds (about 0.9968)."""
    return abs(lande_g_f(4.0) / lande_g_f(3.0))


@dataclass(frozen=True)
class ModelConstants:
    """Physical constants of the control model (angular frequencies, seconds)."""

    omega0: float = TWO_PI * 100e3
    omega_rf_max: float = TWO_PI * 1.5e3
    omega_uw_max: float = TWO_PI * 3.5e3
    g_r: float = field(default_factory=cesium_g_ratio)
    m_up: int = 4
    dt: float = 125e-6
    # re-enable the (1 - g_r) omega_rf Fz^(+) residual on |up> (off in the 8D model)
    rf_residual: bool = False

    def __post_init__(self):
        for name in ("omega0", "omega_rf_max", "omega_uw_max", "dt", "g_r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")

    @property
    def residual_shift(self) -> float:
        """Diagonal energy of |up> from the optional rf residual term."""
        if not self.rf_residual:
            return 0.0
        return (1.0 - self.g_r) * self.omega0 * self.m_up


@dataclass(frozen=True)
class ControlStep:
    omega_rf: float
    phi_rf: float
    omega_uw: float
    phi_uw: float
    duration: float


@dataclass(frozen=True)
class InhomogeneityPoint:
    eps_rf: float = 0.0
    eps_uw: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not (self.eps_rf > -1 and self.eps_uw > -1):
            raise ValueError("amplitude errors must satisfy eps > -1")


NOMINAL = InhomogeneityPoint()

_FX, _FY, _FZ = lower_ops_8d()
_SX, _SY, _SZ = pseudospin_ops_8d()
_P_UP = np.zeros((DIM, DIM), dtype=complex)
_P_UP[UP, UP] = 1.0


def rf_generators(phi):
    """Per-unit-amplitude rf drive ``2(cos p Fx - sin p Fy)`` and its phase derivative.

    Broadcasts over ``phi``; the sign follows the ensemble form of the Hamiltonian.
    """
    phi = np.asarray(phi, dtype=float)[..., None, None]
    g = 2.0 * (np.cos(phi) * _FX - np.sin(phi) * _FY)
    dg = 2.0 * (-np.sin(phi) * _FX - np.cos(phi) * _FY)
    return g, dg


def uw_generators(phi):
    """Per-unit-amplitude microwave drive ``(cos p sx - sin p sy)/2`` and its phase derivative."""
    phi = np.asarray(phi, dtype=float)[..., None, None]
    g = 0.5 * (np.cos(phi) * _SX - np.sin(phi) * _SY)
    dg = 0.5 * (-np.sin(phi) * _SX - np.cos(phi) * _SY)
    return g, dg


def detuning_generator(constants: ModelConstants) -> np.ndarray:
    """Operator multiplying the detuning: ``g_r m_up |up><up| - Fz``."""
    return constants.g_r * constants.m_up * _P_UP - _FZ


def static_term(constants: ModelConstants) -> np.ndarray:
    return constants.residual_shift * _P_UP


def check_step(step: ControlStep, constants: ModelConstants, slack: float = 1e-9) -> None:
    if not (0 <= step.omega_rf <= constants.omega_rf_max * (1 + slack)):
        raise ValueError(f"rf amplitude {step.omega_rf!r} outside [0, {constants.omega_rf_max!r}]")
    if not (0 <= step.omega_uw <= constants.omega_uw_max * (1 + slack)):
        raise ValueError(f"microwave amplitude {step.omega_uw!r} outside [0, {constants.omega_uw_max!r}]")
    if not step.duration > 0:
        raise ValueError(f"step duration must be positive, got {step.duration!r}")


def build_hamiltonian(step: ControlStep, point: InhomogeneityPoint,
                      constants: ModelConstants) -> np.ndarray:
    """8x8 Hamiltonian of one control step at one ensemble point."""
    check_step(step, constants)
    g_rf, _ = rf_generators(step.phi_rf)
    g_uw, _ = uw_generators(step.phi_uw)
    h = (step.omega_rf * (1 + point.eps_rf) * g_rf
         + step.omega_uw * (1 + point.eps_uw) * g_uw
         + point.delta * detuning_generator(constants)
         + static_term(constants))
    return h


def is_rf_pure(step: ControlStep) -> bool:
    return step.omega_uw == 0


def is_uw_pure(step: ControlStep) -> bool:
    return step.omega_rf == 0
