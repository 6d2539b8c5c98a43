import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from math import comb

import oracles
from hfqudit import spin_algebra as sa

SPINS = [0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4]


def random_axes(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# --- angular momentum operators ---

def test_spin_half_is_pauli_over_two():
    fx, fy, fz = sa.angular_momentum_ops(0.5)
    np.testing.assert_allclose(fz, np.diag([-0.5, 0.5]))
    np.testing.assert_allclose(fx, 0.5 * sa.PAULI_X)
    # m ascends, so the Pauli matrices appear with the basis order flipped
    np.testing.assert_allclose(fy, -0.5 * sa.PAULI_Y)


def test_spin_three_dimension_and_spectrum():
    fx, fy, fz = sa.angular_momentum_ops(3)
    assert fz.shape == (7, 7)
    np.testing.assert_array_equal(np.diag(fz).real, np.arange(-3, 4))
    assert np.count_nonzero(fz - np.diag(np.diag(fz))) == 0


@pytest.mark.parametrize("f", SPINS)
def test_matches_element_oracle(f):
    for ours, ref in zip(sa.angular_momentum_ops(f), oracles.spin_matrices(f)):
        np.testing.assert_allclose(ours, ref, atol=1e-14)


@pytest.mark.parametrize("f", SPINS)
def test_commutators_and_casimir(f):
    fx, fy, fz = sa.angular_momentum_ops(f)
    ops = (fx, fy, fz)
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        comm = ops[i] @ ops[j] - ops[j] @ ops[i]
        assert np.max(np.abs(comm - 1j * ops[k])) < 1e-12
    casimir = fx @ fx + fy @ fy + fz @ fz
    assert np.max(np.abs(casimir - f * (f + 1) * np.eye(len(fz)))) < 1e-12
    assert all(sa.is_hermitian(o) for o in ops)


@pytest.mark.parametrize("bad", [-0.5, 0.3, 1.25])
def test_invalid_spin_rejected(bad):
    with pytest.raises(ValueError):
        sa.spin_dim(bad)


# --- rotations ---

def test_rotation_unitary_1000_random():
    rng = np.random.default_rng(11)
    axes = random_axes(rng, 1000)
    angles = rng.uniform(-4 * np.pi, 4 * np.pi, 1000)
    fs = rng.choice(SPINS, 1000)
    worst = 0.0
    for f, n, a in zip(fs, axes, angles):
        u = sa.su2_rotation(f, n, a)
        worst = max(worst, np.max(np.abs(u.conj().T @ u - np.eye(len(u)))))
    assert worst <= 1e-12


def test_rotation_group_property():
    rng = np.random.default_rng(5)
    for n, a, b in zip(random_axes(rng, 50), rng.normal(size=50) * 3, rng.normal(size=50) * 3):
        lhs = sa.su2_rotation(3, n, a) @ sa.su2_rotation(3, n, b)
        assert np.max(np.abs(lhs - sa.su2_rotation(3, n, a + b))) <= 1e-10


def test_rotation_examples():
    np.testing.assert_allclose(sa.su2_rotation(3, (0, 0, 1), 0.0), np.eye(7), atol=1e-15)
    np.testing.assert_allclose(sa.su2_rotation(0.5, (1, 0, 0), np.pi), -1j * sa.PAULI_X, atol=1e-12)
    alpha = 0.37
    np.testing.assert_allclose(sa.su2_rotation(3, (0, 0, 1), alpha),
                               np.diag(np.exp(-1j * np.arange(-3, 4) * alpha)), atol=1e-12)


def test_rotation_matches_expm_oracle():
    from scipy.linalg import expm
    rng = np.random.default_rng(2)
    fx, fy, fz = oracles.spin_matrices(3)
    for n, a in zip(random_axes(rng, 10), rng.normal(size=10)):
        ref = expm(-1j * a * (n[0] * fx + n[1] * fy + n[2] * fz))
        np.testing.assert_allclose(sa.su2_rotation(3, n, a), ref, atol=1e-12)


def test_non_unit_axis_rejected():
    with pytest.raises(ValueError, match="unit"):
        sa.su2_rotation(3, (1.0, 1.0, 0.0), 0.1)


# --- coherent states ---

def test_coherent_state_examples():
    np.testing.assert_allclose(sa.spin_coherent_state(3, 0.0, 0.0), np.eye(7)[6], atol=1e-15)
    south = sa.spin_coherent_state(3, np.pi, 0.0)
    assert abs(abs(south[0]) - 1) < 1e-12
    equator = sa.spin_coherent_state(3, np.pi / 2, 0.0)
    expected = np.sqrt([comb(6, k) for k in range(7)]) / 2 ** 3
    np.testing.assert_allclose(np.abs(equator), expected, atol=1e-12)
    # oracle: matrix exponential of -i theta Fy on |3,3>
    np.testing.assert_allclose(equator, oracles.coherent_state_expm(np.pi / 2, 0.0), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, np.pi), st.floats(0, 2 * np.pi))
def test_closed_form_matches_rotation(theta, phi):
    np.testing.assert_allclose(sa.coherent_amplitudes(3, theta, phi),
                               sa.spin_coherent_state(3, theta, phi), atol=1e-12)


def test_husimi_normalization_quadrature():
    # (2f+1)/(4 pi) integral of Q over the sphere; Gauss-Legendre in cos(theta) is exact here
    rng = np.random.default_rng(3)
    x, w = np.polynomial.legendre.leggauss(16)
    theta = np.arccos(x)
    phi = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    c = sa.coherent_amplitudes(3, tt, pp)
    for _ in range(20):
        psi = sa.normalize(rng.normal(size=7) + 1j * rng.normal(size=7))
        q = np.abs(c.conj() @ psi) ** 2
        integral = 7 / (4 * np.pi) * np.sum(w[:, None] * q) * (2 * np.pi / len(phi))
        assert abs(integral - 1) < 1e-6


# --- embedding ---

def test_embed_examples():
    p_lower = sa.embed(np.eye(7), "lower7")
    assert np.allclose(p_lower @ p_lower, p_lower) and np.linalg.matrix_rank(p_lower) == 7
    sz = sa.embed(sa.PAULI_Z, "pseudospin2")
    up, down = sa.ket(4, 4), sa.ket(3, 3)
    np.testing.assert_allclose(sz, np.outer(up, up) - np.outer(down, down))
    fx8 = sa.embed(sa.angular_momentum_ops(3)[0], "lower7")
    np.testing.assert_array_equal(fx8 @ up, np.zeros(8))


@pytest.mark.parametrize("shape,sub", [((2, 2), "lower7"), ((7, 7), "pseudospin2"), ((7, 7), "bogus")])
def test_embed_dimension_mismatch(shape, sub):
    with pytest.raises(ValueError):
        sa.embed(np.zeros(shape), sub)


def test_basis_layout():
    assert sa.BASIS_LABELS[sa.UP] == "|4,4>" and sa.BASIS_LABELS[sa.DOWN] == "|3,3>"
    with pytest.raises(ValueError):
        sa.ket(4, 3)


def test_check_state():
    with pytest.raises(ValueError, match="normalized"):
        sa.check_state(np.ones(8))
    with pytest.raises(ValueError, match="dimension"):
        sa.check_state(np.ones(7) / np.sqrt(7))
