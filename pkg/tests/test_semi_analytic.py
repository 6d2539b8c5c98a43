import numpy as np
import pytest

import oracles
from hfqudit import model
from hfqudit.model import InhomogeneityPoint, ModelConstants
from hfqudit.optimizer import haar_random_state
from hfqudit.propagation import EnsembleGrid, point_fidelities, propagate
from hfqudit.semi_analytic import (Stage, SynthesisError, SynthesisSequence, bloch_vector,
                                   husimi_max, husimi_q, inverse_synthesize, reverse_sequence,
                                   robust_su2_subpulse, rotation_params, semi_analytic_ensemble,
                                   uw_pi_pulse_axis)
from hfqudit.spin_algebra import (DOWN, PAULI_X, PAULI_Y, PAULI_Z, UP, basis_state, embed,
                                  embed_state, expm_hermitian, ket, normalize, spin_coherent_state)

C = ModelConstants()


def pseudo(c_up, c_down):
    return normalize(np.array([c_up, c_down], dtype=complex))


# --- Husimi ---

def test_flat_husimi_for_mixed_state():
    rho = np.eye(7) / 7
    rng = np.random.default_rng(0)
    q = husimi_q(rho, rng.uniform(0, np.pi, 50), rng.uniform(0, 2 * np.pi, 50))
    assert np.max(np.abs(q - 1 / 7)) <= 1e-10
    assert abs(husimi_max(rho)[2] - 1 / 7) <= 1e-10


@pytest.mark.parametrize("theta,phi", [(0.4, 1.1), (2.5, 5.0), (np.pi / 2, 3.0), (1.7, 0.2)])
def test_husimi_max_of_coherent_state(theta, phi):
    psi = embed_state(spin_coherent_state(3, theta, phi), "lower7")
    t, p, v = husimi_max(psi)
    assert v == pytest.approx(1, abs=1e-10)
    assert t == pytest.approx(theta, abs=1e-5)
    assert np.angle(np.exp(1j * (p - phi))) == pytest.approx(0, abs=1e-5)


def test_husimi_max_of_m0_dense_grid_oracle():
    # 1000 x 1000 grid: |<theta,phi|3,0>|^2 from expm coherent states
    thetas = np.linspace(0, np.pi, 1000)
    amp = np.array([oracles.coherent_state_expm(t, 0.0)[3] for t in thetas])
    phis = np.linspace(0, 2 * np.pi, 1000, endpoint=False)
    m = 0  # the azimuth enters only as the phase exp(-i m phi)
    q = np.abs(amp[:, None] * np.exp(-1j * m * phis)[None, :]) ** 2
    dense = q.max()
    assert dense == pytest.approx(oracles.HUSIMI_MAX_3_0, abs=1e-5)
    t, _, v = husimi_max(ket(3, 0))
    assert v >= dense - 1e-12 and v == pytest.approx(oracles.HUSIMI_MAX_3_0, abs=1e-10)
    assert t == pytest.approx(np.pi / 2, abs=1e-5)


def test_husimi_max_lower_bound_random_states():
    rng = np.random.default_rng(1)
    for k in range(100):
        psi = haar_random_state(8, [5, k])
        p_lower = float(np.sum(np.abs(psi[:7]) ** 2))
        assert husimi_max(psi)[2] >= p_lower / 7 - 1e-12


def test_husimi_inputs():
    with pytest.raises(SynthesisError, match="nothing to rotate"):
        husimi_max(basis_state(UP))
    with pytest.raises(ValueError):
        husimi_max(np.ones(5))
    v8 = husimi_max(normalize(ket(3, 1) + ket(4, 4)))[2]
    assert v8 == pytest.approx(0.5 * husimi_max(ket(3, 1))[2], abs=1e-10)


# --- microwave axis ---

def _rotate(axis, angle, chi):
    n_sigma = axis[0] * PAULI_X + axis[1] * PAULI_Y + axis[2] * PAULI_Z
    return expm_hermitian(n_sigma / 2, angle) @ chi


def test_pi_axis_examples():
    down, up = pseudo(0, 1), pseudo(1, 0)
    axis, angle = uw_pi_pulse_axis(down)
    np.testing.assert_allclose(axis, [1, 0, 0])
    assert angle == np.pi
    assert abs(_rotate(axis, angle, down)[0]) ** 2 == pytest.approx(1, abs=1e-12)
    axis, _ = uw_pi_pulse_axis(up)
    np.testing.assert_allclose(axis, [0, 0, 1])
    assert abs(_rotate(axis, np.pi, up)[0]) ** 2 == pytest.approx(1, abs=1e-12)
    chi = pseudo(1, 1)
    axis, _ = uw_pi_pulse_axis(chi)
    np.testing.assert_allclose(axis, np.array([1, 0, 1]) / np.sqrt(2), atol=1e-12)
    assert abs(_rotate(axis, np.pi, chi)[0]) ** 2 == pytest.approx(1, abs=1e-12)


def test_pi_axis_random_states():
    rng = np.random.default_rng(2)
    for _ in range(50):
        chi = pseudo(*(rng.normal(size=2) + 1j * rng.normal(size=2)))
        axis, angle = uw_pi_pulse_axis(chi)
        r = bloch_vector(chi)
        assert abs(np.dot(axis, np.cross(r, [0, 0, 1]))) < 1e-12  # coplanar with r and z
        assert np.dot(axis, r) == pytest.approx(axis[2], abs=1e-12)  # bisects them
        assert abs(_rotate(axis, angle, chi)[0]) ** 2 == pytest.approx(1, abs=1e-12)


# --- homogeneous synthesis ---

def test_inverse_of_up_is_empty():
    seq = inverse_synthesize(basis_state(UP))
    assert seq.stages == [] and seq.achieved_error == 0 and seq.converged
    wf = reverse_sequence(seq, C)
    assert len(wf) == 1 and np.all(wf.omega_rf == 0) and np.all(wf.omega_uw == 0)


def test_inverse_of_down_is_one_pi_pulse():
    seq = inverse_synthesize(ket(3, 3))
    assert [s.kind for s in seq.stages] == ["rf", "uw"]
    assert seq.stages[0].waveform is None
    assert seq.stages[1].angle == pytest.approx(np.pi)
    assert seq.achieved_error <= 1e-15
    wf = reverse_sequence(seq, C)
    grid = EnsembleGrid.single(target=ket(3, 3))
    assert point_fidelities(wf, grid, C)[0] == pytest.approx(1, abs=1e-12)


def test_haar_42_converges_under_envelope():
    seq = inverse_synthesize(haar_random_state(8, 42), 1e-4, 20, C)
    assert seq.converged and seq.achieved_error < 1e-4
    assert all(b >= a - 1e-14 for a, b in zip(seq.up_population, seq.up_population[1:]))
    # error_n <= error_0 * prod(1 - q_k) with every q_k >= 1/7
    qs = [s.transfer for s in seq.stages if s.kind == "rf"]
    assert min(qs) >= 1 / 7
    err = 1 - np.array(seq.up_population)
    bound = err[0] * np.cumprod(1 - np.array(qs))
    assert np.all(err[1:] <= bound + 1e-12)
    # direct re-simulation of the inverse sequence
    psi = propagate(seq.inverse_waveform(), model.NOMINAL, C) @ haar_random_state(8, 42)
    assert 1 - abs(psi[UP]) ** 2 == pytest.approx(seq.achieved_error, abs=1e-12)


def test_reverse_haar_7():
    target = haar_random_state(8, 7)
    seq = inverse_synthesize(target, 1e-4, 20, C)
    wf = reverse_sequence(seq, C)
    fid = point_fidelities(wf, EnsembleGrid.single(target=target), C)[0]
    assert abs(fid - (1 - seq.achieved_error)) <= 1e-10


def test_double_reversal():
    seq = inverse_synthesize(haar_random_state(8, 3), 1e-3, 20, C)
    wf = reverse_sequence(seq, C)
    np.testing.assert_allclose(propagate(wf.inverse().inverse(), constants=C), propagate(wf, constants=C),
                               atol=1e-12)
    np.testing.assert_allclose(propagate(wf, constants=C),
                               propagate(seq.inverse_waveform(), constants=C).conj().T, atol=1e-12)


def test_non_convergent_is_flagged_and_not_reversible():
    seq = inverse_synthesize(haar_random_state(8, 42), 1e-6, 2, C)
    assert not seq.converged and seq.achieved_error > 1e-6
    with pytest.raises(SynthesisError, match="non-convergent"):
        reverse_sequence(seq, C)


def test_sequence_validation():
    with pytest.raises(ValueError, match="alternate"):
        SynthesisSequence([Stage("uw", 0.0, 0.0, None)], 0.0, True)
    with pytest.raises(ValueError):
        inverse_synthesize(ket(3, 0), error_threshold=0)


# --- robust sub-pulses ---

def test_subpulse_single_point_reproduces_rotation():
    theta, phi = 1.1, 0.6
    start = embed_state(spin_coherent_state(3, theta, phi), "lower7")
    grid = EnsembleGrid.single()
    init = rotation_params("rf", theta, phi, 3, C)
    res = robust_su2_subpulse("rf", start, basis_state(DOWN), grid, 3, C, init=init, rng=0)
    assert res.overlap == pytest.approx(1, abs=1e-9) and not res.flagged
    chi = embed_state(pseudo(0.3, 0.9j), "pseudospin2")
    res = robust_su2_subpulse("uw", chi, basis_state(UP), grid, 3, C, rng=0)
    assert res.overlap == pytest.approx(1, abs=1e-9)


def test_robust_uw_pi_pulse():
    grid = EnsembleGrid.product([0.0], [-0.01, 0.0, 0.01], [0.0])
    res = robust_su2_subpulse("uw", basis_state(DOWN), basis_state(UP), grid, 3, C, rng=1)
    assert res.overlap >= 0.999
    fids = np.abs([(propagate(res.waveform, p, C) @ basis_state(DOWN))[UP] for p in grid.points]) ** 2
    assert fids.mean() == pytest.approx(res.overlap, abs=1e-12)


def test_robust_rf_rotation_to_down():
    theta, phi = 2.0, 1.0
    start = embed_state(spin_coherent_state(3, theta, phi), "lower7")
    grid = EnsembleGrid.product([-0.01, 0.0, 0.01], [0.0], [0.0])
    res = robust_su2_subpulse("rf", start, basis_state(DOWN), grid, 3, C,
                              init=rotation_params("rf", theta, phi, 3, C), rng=2)
    pops = np.abs([(propagate(res.waveform, p, C) @ start)[DOWN] for p in grid.points]) ** 2
    assert pops.mean() >= 0.99
    assert np.all(res.waveform.omega_rf <= C.omega_rf_max) and np.all(res.waveform.omega_uw == 0)


def test_subpulse_role_checked():
    with pytest.raises(ValueError, match="role"):
        robust_su2_subpulse("both", basis_state(DOWN), basis_state(UP), EnsembleGrid.single())


def test_rotation_too_large_for_steps():
    with pytest.raises(SynthesisError, match="does not fit"):
        rotation_params("uw", 50.0, 0.0, 3, C)


# --- ensemble synthesis ---

def test_homogeneous_grid_reduces_to_analytic():
    target = haar_random_state(8, 42)
    res = semi_analytic_ensemble(EnsembleGrid.single(target=target), 0.9999, C)
    seq = inverse_synthesize(target, 1e-4, 12, C)
    assert res.waveform.equals(reverse_sequence(seq, C))
    assert res.coarse_fidelity == pytest.approx(1 - seq.achieved_error, abs=1e-10)


def test_rejects_eps_rf_dependent_targets():
    grid = EnsembleGrid([-0.01, 0.01], [0, 0], [0, 0], [1, 1], [ket(3, 0), ket(3, 1)])
    with pytest.raises(SynthesisError, match="mixed"):
        semi_analytic_ensemble(grid, 0.99, C)


def test_rejects_asymmetric_detuning_grid():
    grid = EnsembleGrid([0, 0], [0, 0], [0, 10.0], [1, 1], ket(3, 0))
    with pytest.raises(SynthesisError, match="symmetric"):
        semi_analytic_ensemble(grid, 0.99, C)


def test_eps_uw_dependent_targets():
    # a target family generated by the microwave error itself: distinct at +-1%
    psi0 = haar_random_state(8, 11)
    gen = embed(0.5 * PAULI_X, "pseudospin2")
    targets = [expm_hermitian(gen, 50 * np.pi * (1 + e)) @ psi0 for e in (-0.01, 0.01)]
    assert abs(np.vdot(*targets)) ** 2 < 0.9
    grid = EnsembleGrid([0, 0], [-0.01, 0.01], [0, 0], [1, 1], targets)
    res = semi_analytic_ensemble(grid, 0.99, C, seed=0, restarts=2)
    fids = point_fidelities(res.waveform, grid, C)
    assert fids.mean() >= 0.95
    assert res.coarse_fidelity == pytest.approx(fids.mean(), abs=1e-12)


def test_ensemble_waveform_structure():
    target = haar_random_state(8, 5)
    v = [-0.01, 0.0, 0.01]
    grid = EnsembleGrid.product(v, v, np.array(v) * C.omega_rf_max, target)
    res = semi_analytic_ensemble(grid, 0.9, C, seed=3, restarts=2)
    wf = res.waveform
    # every step is pure rf or pure microwave and lasts one dt
    assert np.all((wf.omega_rf == 0) | (wf.omega_uw == 0))
    np.testing.assert_allclose(wf.duration, C.dt)
    assert len(res.attempts) == 2 and res.restart in (0, 1)
    assert res.converged == (res.coarse_fidelity >= 0.9)
    # reversal bookkeeping: the preparation at +D is the adjoint of the inverse search at -D
    p = InhomogeneityPoint(0.01, -0.01, 0.01 * C.omega_rf_max)
    inv = propagate(wf.inverse(), InhomogeneityPoint(p.eps_rf, p.eps_uw, -p.delta), C)
    np.testing.assert_allclose(inv, propagate(wf, p, C).conj().T, atol=1e-10)


def test_bad_rf_desired():
    with pytest.raises(ValueError, match="rf_desired"):
        semi_analytic_ensemble(EnsembleGrid.single(target=ket(3, 0)), 0.99, C, rf_desired="x")
