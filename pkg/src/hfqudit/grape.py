"""Ensemble state-transfer fidelity and its exact gradient.

For a stack of step Hamiltonians ``H[p, n]`` (grid point p, step n) and their
derivatives with respect to K control parameters per step, the fidelity

    F = sum_p w_p |<t_p| U_pN ... U_p1 |psi_p>|^2

and dF/dtheta[n, k] are computed from forward states and backward costates.
The derivative of each step propagator uses the eigenbasis of ``H``:

    dU = V [(V^+ dH V) o G] V^+,
    G_ab = -i dt exp(-i (w_a + w_b) dt / 2) sinc((w_a - w_b) dt / 2),

which is exact and well conditioned for degenerate eigenvalues.
"""

from __future__ import annotations

import numpy as np


def transfer_fidelity(h, durations, initial, targets, weights, dh=None):
    """Return ``(F, per_point, grad)``; ``grad`` is ``None`` when ``dh`` is omitted.

    Parameters
    ----------
    h : (P, N, d, d) complex
    durations : (N,) step durations
    initial, targets : (P, d) complex
    weights : (P,) non-negative, summing to one
    dh : (P, N, K, d, d) complex, optional
    """
    p_count, n_steps, d, _ = h.shape
    dt = np.asarray(durations, dtype=float)
    w, v = np.linalg.eigh(h)
    phase = np.exp(-1j * dt[None, :, None] * w)  # (P, N, d)
    vh = np.swapaxes(v.conj(), -1, -2)

    # forward states expressed in each step's eigenbasis before the step
    psi = np.array(initial, dtype=complex)
    before = np.empty((p_count, n_steps, d), dtype=complex)
    for n in range(n_steps):
        b = np.einsum("pij,pj->pi", vh[:, n], psi)
        before[:, n] = b
        psi = np.einsum("pij,pj->pi", v[:, n], phase[:, n] * b)
    targets = np.asarray(targets, dtype=complex)
    overlap = np.sum(targets.conj() * psi, axis=1)
    per_point = np.abs(overlap) ** 2
    weights = np.asarray(weights, dtype=float)
    fidelity = float(np.dot(weights, per_point))
    if dh is None:
        return fidelity, per_point, None

    # backward costates: chi_n = U_{n+1}^+ ... U_N^+ |t>, in the eigenbasis of step n
    chi = targets.copy()
    after = np.empty((p_count, n_steps, d), dtype=complex)
    for n in range(n_steps - 1, -1, -1):
        a = np.einsum("pij,pj->pi", vh[:, n], chi)
        after[:, n] = a
        chi = np.einsum("pij,pj->pi", v[:, n], np.conj(phase[:, n]) * a)

    wa = w[..., :, None]
    wb = w[..., None, :]
    g = (-1j * dt[None, :, None, None] * np.exp(-0.5j * dt[None, :, None, None] * (wa + wb))
         * np.sinc((wa - wb) * dt[None, :, None, None] / (2 * np.pi)))
    m = after.conj()[..., :, None] * before[..., None, :] * g  # (P, N, d, d)
    dh_eig = vh[:, :, None] @ dh @ v[:, :, None]
    dc = np.einsum("pnab,pnkab->pnk", m, dh_eig)
    dfp = 2.0 * np.real(overlap.conj()[:, None, None] * dc)
    grad = np.einsum("p,pnk->nk", weights, dfp)
    return fidelity, per_point, grad
