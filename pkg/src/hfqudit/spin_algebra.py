"""Angular-momentum operators, SU(2) rotations and the 8-level working basis.

The working space is the seven F=3 sublevels plus the stretched upper state,
ordered ``|3,-3>, ..., |3,3>, |4,4>``.  Index 6 is the pseudospin ``|down>``
(= |3,3>) and index 7 is ``|up>`` (= |4,4>).  Operators and states are plain
complex numpy arrays; the helpers here validate shapes and hermiticity.
"""

from __future__ import annotations

from fractions import Fraction
from math import comb

import numpy as np

DIM = 8
F_LOWER = 3
LOWER = slice(0, 7)
DOWN = 6
UP = 7
BASIS_LABELS = tuple(f"|3,{m}>" for m in range(-3, 4)) + ("|4,4>",)

# pseudospin ordering is (up, down) so that sigma_z = |up><up| - |down><down|
PSEUDOSPIN_INDICES = (UP, DOWN)

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

HERMITIAN_TOL = 1e-12
NORM_TOL = 1e-10


def spin_dim(f) -> int:
    """Return 2f+1, checking that 2f is a non-negative integer."""
    twice = Fraction(f).limit_denominator(1000) * 2
    if twice.denominator != 1 or twice < 0 or abs(float(twice) - 2 * float(f)) > 1e-12:
        raise ValueError(f"spin quantum number must be a non-negative half-integer, got {f!r}")
    return int(twice) + 1


def angular_momentum_ops(f):
    """Spin-f matrices ``(Fx, Fy, Fz)`` in the |f,m> basis ordered m = -f ... +f."""
    d = spin_dim(f)
    f = (d - 1) / 2
    m = np.arange(d) - f
    # raising operator: <m+1|F+|m> = sqrt(f(f+1) - m(m+1))
    jp = np.diag(np.sqrt(f * (f + 1) - m[:-1] * (m[:-1] + 1)), k=-1).astype(complex)
    jm = jp.conj().T
    fx = (jp + jm) / 2
    fy = (jp - jm) / 2j
    fz = np.diag(m).astype(complex)
    return fx, fy, fz


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    a = np.asarray(a)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and np.max(np.abs(a - a.conj().T), initial=0.0) <= tol


def expm_hermitian(h: np.ndarray, t: float = 1.0) -> np.ndarray:
    """``exp(-i t h)`` for Hermitian ``h`` (or a stack of them) via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * t * w)
    return (v * phases[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def su2_rotation(f, axis, angle: float) -> np.ndarray:
    """Spin-f representation of the rotation ``exp(-i angle n.F)``."""
    n = np.asarray(axis, dtype=float)
    if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-10:
        raise ValueError(f"rotation axis must be a unit 3-vector, got {axis!r}")
    fx, fy, fz = angular_momentum_ops(f)
    return expm_hermitian(n[0] * fx + n[1] * fy + n[2] * fz, angle)


def stretched_state(f) -> np.ndarray:
    """The maximal-projection state |f, m=+f>."""
    psi = np.zeros(spin_dim(f), dtype=complex)
    psi[-1] = 1.0
    return psi


def spin_coherent_state(f, theta: float, phi: float) -> np.ndarray:
    """``exp(-i phi Fz) exp(-i theta Fy) |f, f>``; theta=0 gives the stretched state."""
    ry = su2_rotation(f, (0.0, 1.0, 0.0), theta)
    rz = su2_rotation(f, (0.0, 0.0, 1.0), phi)
    return rz @ ry @ stretched_state(f)


def coherent_amplitudes(f, theta, phi) -> np.ndarray:
    """Closed-form coherent-state amplitudes, broadcast over ``theta``/``phi``.

    The last axis indexes m = -f ... +f.  Agrees with :func:`spin_coherent_state`.
    """
    d = spin_dim(f)
    f = (d - 1) / 2
    theta = np.asarray(theta, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    m = np.arange(d) - f
    k = np.arange(d)  # k = f + m
    binom = np.sqrt(np.array([comb(d - 1, int(i)) for i in k], dtype=float))
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    return binom * c ** k * s ** (d - 1 - k) * np.exp(-1j * m * phi)


def embed(op: np.ndarray, subspace: str) -> np.ndarray:
    """Place a 7x7 (``"lower7"``) or 2x2 (``"pseudospin2"``) operator in the 8D space."""
    op = np.asarray(op, dtype=complex)
    out = np.zeros((DIM, DIM), dtype=complex)
    if subspace == "lower7":
        if op.shape != (7, 7):
            raise ValueError(f"lower7 embedding needs a 7x7 operator, got shape {op.shape}")
        out[LOWER, LOWER] = op
    elif subspace == "pseudospin2":
        if op.shape != (2, 2):
            raise ValueError(f"pseudospin2 embedding needs a 2x2 operator, got shape {op.shape}")
        idx = np.array(PSEUDOSPIN_INDICES)
        out[np.ix_(idx, idx)] = op
    else:
        raise ValueError(f"unknown subspace {subspace!r}")
    return out


def embed_state(vec: np.ndarray, subspace: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex)
    out = np.zeros(DIM, dtype=complex)
    if subspace == "lower7":
        if vec.shape != (7,):
            raise ValueError(f"lower7 state must have 7 amplitudes, got {vec.shape}")
        out[LOWER] = vec
    elif subspace == "pseudospin2":
        if vec.shape != (2,):
            raise ValueError(f"pseudospin2 state must have 2 amplitudes, got {vec.shape}")
        out[list(PSEUDOSPIN_INDICES)] = vec
    else:
        raise ValueError(f"unknown subspace {subspace!r}")
    return out


def basis_state(index: int, dim: int = DIM) -> np.ndarray:
    psi = np.zeros(dim, dtype=complex)
    psi[index] = 1.0
    return psi


def ket(f: int, m: int) -> np.ndarray:
    """8D basis vector |f,m>; only F=3 sublevels and |4,4> exist in this space."""
    if f == 4 and m == 4:
        return basis_state(UP)
    if f == 3 and -3 <= m <= 3:
        return basis_state(m + 3)
    raise ValueError(f"|{f},{m}> is outside the 8-level working space")


def check_state(psi, dim: int = DIM) -> np.ndarray:
    """Validate a normalized state vector and return it as a complex array."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (dim,):
        raise ValueError(f"expected a state of dimension {dim}, got shape {psi.shape}")
    norm2 = float(np.vdot(psi, psi).real)
    if abs(norm2 - 1.0) > NORM_TOL:
        raise ValueError(f"state is not normalized (|psi|^2 = {norm2:.12g})")
    return psi


def normalize(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return psi / np.linalg.norm(psi)


def lower_ops_8d():
    """F=3 spin operators embedded in the 8D space (zero on |up>)."""
    return tuple(embed(op, "lower7") for op in angular_momentum_ops(F_LOWER))


def pseudospin_ops_8d():
    """Pauli operators on span{|up>, |down>} embedded in the 8D space."""
    return tuple(embed(op, "pseudospin2") for op in (PAULI_X, PAULI_Y, PAULI_Z))
