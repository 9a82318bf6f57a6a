import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ghzfb.algebra import (
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Z,
    apply_unitary,
    basis_ket,
    dissipator,
    embed_single_qubit,
    expectation,
    fidelity,
    ket,
    projector,
    unravel,
    validate_state,
)
from ghzfb.model import build_jz, target_states

from conftest import random_density, random_hermitian


def test_embed_identity_any_position():
    for q in (1, 2, 3):
        assert np.array_equal(embed_single_qubit(np.eye(2), q), np.eye(8))


def test_embed_sigma_z_third_qubit_alternates():
    out = embed_single_qubit(SIGMA_Z, 3)
    assert np.array_equal(np.diag(out).real, [-1, 1, -1, 1, -1, 1, -1, 1])


def test_embed_sigma_x_first_qubit_flips_msb():
    out = embed_single_qubit(SIGMA_X, 1) @ basis_ket(0b000)
    assert np.array_equal(out, basis_ket(0b100))


def test_embed_rejects_bad_inputs():
    with pytest.raises(ValueError):
        embed_single_qubit(SIGMA_X, 0)
    with pytest.raises(ValueError):
        embed_single_qubit(np.eye(3), 1)


def test_dissipator_single_decay_channel():
    L = embed_single_qubit(SIGMA_MINUS, 1)
    rho = projector(basis_ket(0b100))
    expected = projector(basis_ket(0b000)) - projector(basis_ket(0b100))
    assert np.allclose(dissipator(L, rho), expected, atol=1e-14)


def test_dissipator_dephasing_leaves_populations():
    L = embed_single_qubit(SIGMA_Z, 1)
    rho = np.diag(np.array([0.3, 0.1, 0.2, 0.05, 0.05, 0.1, 0.1, 0.1], dtype=complex))
    assert np.allclose(dissipator(L, rho), 0.0, atol=1e-14)


def test_dissipator_vanishes_on_zero_eigenstate():
    jz = build_jz((1.0, 1.0, 2.0))
    rho = projector(target_states()["pre_ghz"])
    assert np.allclose(dissipator(jz, rho), 0.0, atol=1e-14)


def test_unravel_vanishes_on_any_eigenprojector():
    jz = build_jz((1.0, 1.0, 2.0))
    for idx in range(8):
        rho = projector(basis_ket(idx))
        assert np.allclose(unravel(jz, rho), 0.0, atol=1e-13)


def test_unravel_vanishes_on_whole_zero_eigenspace():
    # any superposition of the two zero-eigenvalue components is invisible
    # to the measurement record
    jz = build_jz((1.0, 1.0, 2.0))
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        psi = ket({0b001: a, 0b110: b})
        assert np.allclose(unravel(jz, projector(psi)), 0.0, atol=1e-13)


def test_unravel_zero_mean_state():
    jz = build_jz((1.0, 1.0, 2.0))
    rho = projector(target_states()["plus"])
    expected = jz @ rho + rho @ jz
    assert np.allclose(unravel(jz, rho), expected, atol=1e-14)


def test_unravel_sigma_z_on_maximally_mixed():
    # direct evaluation: sz rho + rho sz = sz/4 and Tr[2 sz rho] = 0, so the
    # innovation equals the traceless matrix sz/4 (not the zero matrix)
    sz3 = embed_single_qubit(SIGMA_Z, 3)
    rho = np.eye(8, dtype=complex) / 8.0
    out = unravel(sz3, rho)
    assert abs(np.trace(out)) < 1e-13
    assert np.allclose(out, sz3 / 4.0, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_superoperators_traceless(seed):
    rng = np.random.default_rng(seed)
    rho = random_density(rng)
    op = random_hermitian(rng)
    assert abs(np.trace(dissipator(op, rho))) < 1e-12
    assert abs(np.trace(unravel(op, rho))) < 1e-12


def test_apply_unitary_identity_and_flip():
    rho = projector(basis_ket(0b001))
    assert np.allclose(apply_unitary(np.eye(8), rho), rho)
    xxx = np.linalg.multi_dot([embed_single_qubit(SIGMA_X, q) for q in (1, 2, 3)])
    assert np.allclose(apply_unitary(xxx, rho), projector(basis_ket(0b110)), atol=1e-14)


def test_apply_unitary_preserves_flip_symmetric_target():
    xxx = np.linalg.multi_dot([embed_single_qubit(SIGMA_X, q) for q in (1, 2, 3)])
    rho = projector(target_states()["pre_ghz"])
    assert np.allclose(apply_unitary(xxx, rho), rho, atol=1e-14)


def test_apply_unitary_rejects_nonunitary():
    with pytest.raises(ValueError):
        apply_unitary(np.diag([2.0] + [1.0] * 7), projector(basis_ket(0)))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_apply_unitary_preserves_trace_and_spectrum(seed):
    rng = np.random.default_rng(seed)
    rho = random_density(rng)
    h = random_hermitian(rng)
    eigvals, eigvecs = np.linalg.eigh(h)
    U = eigvecs @ np.diag(np.exp(1j * eigvals)) @ eigvecs.conj().T
    out = apply_unitary(U, rho)
    assert abs(np.trace(out) - 1.0) < 1e-10
    assert np.allclose(np.linalg.eigvalsh(out), np.linalg.eigvalsh(rho), atol=1e-10)


def test_fidelity_examples():
    states = target_states()
    target = states["pre_ghz"]
    assert fidelity(projector(target), target) == pytest.approx(1.0, abs=1e-12)
    assert fidelity(np.eye(8, dtype=complex) / 8, target) == pytest.approx(0.125, abs=1e-12)
    assert fidelity(projector(basis_ket(0b001)), target) == pytest.approx(0.5, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1),
       st.floats(min_value=0.0, max_value=1.0))
def test_fidelity_linear_in_state(seed, weight):
    rng = np.random.default_rng(seed)
    target = target_states()["pre_ghz"]
    rho_a, rho_b = random_density(rng), random_density(rng)
    mix = weight * rho_a + (1 - weight) * rho_b
    expected = weight * fidelity(rho_a, target) + (1 - weight) * fidelity(rho_b, target)
    assert fidelity(mix, target) == pytest.approx(expected, abs=1e-10)


def test_fidelity_one_only_for_target_projector(rng):
    target = target_states()["pre_ghz"]
    assert fidelity(projector(target), target) == pytest.approx(1.0, abs=1e-12)
    for _ in range(20):
        rho = 0.9 * projector(target) + 0.1 * random_density(rng)
        assert fidelity(rho, target) < 1.0 - 1e-4


def test_expectation_examples():
    jz = build_jz((1.0, 1.0, 2.0))
    assert expectation(jz, projector(basis_ket(0b111))) == pytest.approx(4.0, abs=1e-12)
    assert expectation(jz, projector(target_states()["plus"])) == pytest.approx(0.0, abs=1e-12)
    mixed = 0.5 * (projector(basis_ket(0b011)) + projector(basis_ket(0b101)))
    assert expectation(jz, mixed) == pytest.approx(2.0, abs=1e-12)


def test_validate_state_passes_valid(rng):
    rep = validate_state(random_density(rng))
    assert rep.ok


def test_validate_state_flags_trace():
    rho = np.eye(8, dtype=complex) / 8 * 1.01
    rep = validate_state(rho)
    assert not rep.trace_ok and rep.hermitian_ok


def test_validate_state_flags_negativity():
    rho = np.diag(np.array([1.001e0] + [0.0] * 6 + [-1e-3], dtype=complex))
    rho = rho / np.trace(rho).real
    rep = validate_state(rho)
    assert not rep.positive_ok
