"""Independent reference implementations used only by the tests.

These deliberately avoid the package's own fast paths: spin matrices come
from explicit matrix elements, exponentials from ``scipy.linalg.expm`` and
Hamiltonians are written term by term from the model definition.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

# frozen reference values
G_RATIO_CS = 0.9968185679  # |g_F(F=4) / g_F(F=3)| for Cs, 10 significant digits
HUSIMI_MAX_3_0 = 20.0 / 64.0  # max over the sphere of |<theta,phi|3,0>|^2, at theta = pi/2


def spin_matrices(f):
    """Spin matrices from <m'|F±|m> written element by element."""
    d = int(round(2 * f)) + 1
    ms = [-f + k for k in range(d)]
    fx = np.zeros((d, d), dtype=complex)
    fy = np.zeros((d, d), dtype=complex)
    fz = np.zeros((d, d), dtype=complex)
    for i, mp in enumerate(ms):
        fz[i, i] = mp
        for j, m in enumerate(ms):
            if mp == m + 1:
                c = np.sqrt(f * (f + 1) - m * (m + 1))
                fx[i, j] += c / 2
                fy[i, j] += c / 2j
            if mp == m - 1:
                c = np.sqrt(f * (f + 1) - m * (m - 1))
                fx[i, j] += c / 2
                fy[i, j] -= c / 2j
    return fx, fy, fz


def coherent_state_expm(theta, phi, f=3):
    fx, fy, fz = spin_matrices(f)
    top = np.zeros(fz.shape[0], dtype=complex)
    top[-1] = 1.0
    return expm(-1j * phi * fz) @ expm(-1j * theta * fy) @ top


def hamiltonian(omega_rf, phi_rf, omega_uw, phi_uw, eps_rf, eps_uw, delta, g_r, m_up=4):
    """8x8 Hamiltonian assembled from its three terms in the fixed basis order."""
    fx, fy, fz = spin_matrices(3)
    h = np.zeros((8, 8), dtype=complex)
    h[:7, :7] += 2 * omega_rf * (1 + eps_rf) * (np.cos(phi_rf) * fx - np.sin(phi_rf) * fy)
    h[:7, :7] -= delta * fz
    h[7, 7] += delta * g_r * m_up
    # pseudospin: sigma_x couples |4,4> (index 7) with |3,3> (index 6)
    half = 0.5 * omega_uw * (1 + eps_uw)
    h[7, 6] += half * (np.cos(phi_uw) + 1j * np.sin(phi_uw))
    h[6, 7] += half * (np.cos(phi_uw) - 1j * np.sin(phi_uw))
    return h


def propagator(steps, eps_rf, eps_uw, delta, g_r):
    """Product of expm step propagators; ``steps`` rows are (Wrf, prf, Wuw, puw, dt)."""
    u = np.eye(8, dtype=complex)
    for w_rf, p_rf, w_uw, p_uw, dt in steps:
        u = expm(-1j * dt * hamiltonian(w_rf, p_rf, w_uw, p_uw, eps_rf, eps_uw, delta, g_r)) @ u
    return u


def waveform_rows(waveform):
    return list(zip(waveform.omega_rf, waveform.phi_rf, waveform.omega_uw, waveform.phi_uw,
                    waveform.duration))


def central_difference(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def lande_ratio():
    """g_F ratio from the hyperfine Lande formula with CODATA g_s and Cs g_I."""
    g_j, g_i, i, j = 2.00231930436256, -0.00039885395, 3.5, 0.5

    def g_f(f):
        return (g_j * (f * (f + 1) - i * (i + 1) + j * (j + 1)) / (2 * f * (f + 1))
                + g_i * (f * (f + 1) + i * (i + 1) - j * (j + 1)) / (2 * f * (f + 1)))

    return abs(g_f(4) / g_f(3))
