import numpy as np
import pytest

from ghzfb.algebra import dissipator, projector
from ghzfb.model import ModelConfig, build_jz, liouvillian_apply, target_states
from ghzfb.reference import lindblad_fidelity, lindblad_generator, lindblad_states

from conftest import random_density


def test_generator_matches_dense_apply(rng):
    cfg = ModelConfig(gamma_d=0.7, eta=1.0, gamma=(0.02, 0.01, 0.03),
                      gamma_phi=(0.002, 0.0, 0.001))
    gen = lindblad_generator(cfg)
    jz = build_jz(cfg.jz_weights)
    for _ in range(5):
        rho = random_density(rng)
        expected = liouvillian_apply(cfg, rho) + 0.5 * cfg.gamma_d * dissipator(jz, rho)
        out = (gen @ rho.reshape(-1)).reshape(8, 8)
        assert np.max(np.abs(out - expected)) < 1e-12


def test_pinned_target_stays_put():
    cfg = ModelConfig(gamma_d=1.0, eta=1.0)
    rho0 = projector(target_states()["pre_ghz"])
    times = np.arange(1, 11) * 1.0
    fid = lindblad_fidelity(cfg, rho0, times, 1e-3)
    assert np.allclose(fid, 1.0, atol=1e-12)


def test_dephasing_structure_from_plus():
    # measurement dephasing alone: populations frozen, cross-eigenspace
    # coherences decay, the within-eigenspace coherence survives
    cfg = ModelConfig(gamma_d=1.0, eta=1.0)
    rho0 = projector(target_states()["plus"])
    states = lindblad_states(cfg, rho0, np.array([5.0]), 1e-3)
    rho = states[0]
    assert np.allclose(np.diag(rho).real, 1 / 8, atol=1e-12)
    assert abs(rho[0b001, 0b110]) == pytest.approx(1 / 8, abs=1e-9)
    assert abs(rho[0b000, 0b111]) < 1e-8


def test_uncontrolled_decay_closed_form():
    gamma = 0.01
    cfg = ModelConfig(gamma_d=0.0, gamma=(gamma,) * 3)
    rho0 = projector(target_states()["pre_ghz"])
    times = np.arange(1, 51) * 1.0
    fid = lindblad_fidelity(cfg, rho0, times, 1e-3)
    expected = (0.25 * np.exp(-gamma * times) + 0.25 * np.exp(-2 * gamma * times)
                + 0.5 * np.exp(-1.5 * gamma * times))
    assert np.max(np.abs(fid - expected)) < 1e-9


def test_states_accept_nonuniform_times():
    cfg = ModelConfig(gamma_d=0.5, gamma=(0.01,) * 3)
    rho0 = projector(target_states()["plus"])
    a = lindblad_states(cfg, rho0, np.array([1.0, 2.0, 4.0]), 1e-3)
    b = lindblad_states(cfg, rho0, np.array([4.0]), 1e-3)
    assert np.max(np.abs(a[-1] - b[0])) < 1e-12
    with pytest.raises(ValueError):
        lindblad_states(cfg, rho0, np.array([2.0, 1.0]), 1e-3)


def test_trace_and_hermiticity_preserved():
    cfg = ModelConfig(gamma_d=1.0, gamma=(0.05, 0.02, 0.01))
    rho0 = projector(target_states()["plus"])
    states = lindblad_states(cfg, rho0, np.arange(1, 6, dtype=float), 1e-3)
    for rho in states:
        assert abs(np.trace(rho) - 1.0) < 1e-10
        assert np.max(np.abs(rho - rho.conj().T)) < 1e-10
        assert np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] > -1e-10
