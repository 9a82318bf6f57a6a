"""Deterministic ensemble-mean oracle.

The unconditional master equation (decay, dephasing, measurement dephasing,
no innovation term) is linear, so it is integrated by building the 64x64
generator column-by-column from the dense superoperator routines and
composing a fixed-step fourth-order one-step matrix. This path shares no
code with the elementwise trajectory kernels, which makes it an independent
cross-check of the ensemble mean.
"""

from __future__ import annotations

import numpy as np

from .algebra import DIM, fidelity
from .model import ModelConfig, build_jz, dissipator, liouvillian_apply, target_states

REFERENCE_SUBSTEPS = 10


def lindblad_generator(cfg: ModelConfig) -> np.ndarray:
    """Column-wise 64x64 matrix of rho -> L(rho) + (gamma_d/2) D[Jz](rho)."""
    cfg.validate()
    jz = build_jz(cfg.jz_weights)
    gen = np.zeros((DIM * DIM, DIM * DIM), dtype=complex)
    for k in range(DIM * DIM):
        basis_mat = np.zeros((DIM, DIM), dtype=complex)
        basis_mat[k // DIM, k % DIM] = 1.0
        out = liouvillian_apply(cfg, basis_mat)
        if cfg.gamma_d:
            out = out + 0.5 * cfg.gamma_d * dissipator(jz, basis_mat)
        gen[:, k] = out.reshape(-1)
    return gen


def _one_step_matrix(gen: np.ndarray, h: float) -> np.ndarray:
    """Classical RK4 for a linear system collapses to a degree-4 polynomial."""
    hg = h * gen
    out = np.eye(gen.shape[0], dtype=complex)
    term = np.eye(gen.shape[0], dtype=complex)
    for k in (1, 2, 3, 4):
        term = term @ hg / k
        out = out + term
    return out


def lindblad_states(cfg: ModelConfig, rho0: np.ndarray, times: np.ndarray,
                    dt: float) -> np.ndarray:
    """Unconditional states at the requested times.

    Times must be nondecreasing multiples of dt/REFERENCE_SUBSTEPS; the
    substep matrix is raised to the gap between consecutive outputs, so a
    uniform grid costs one matrix power.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return np.zeros((0, DIM, DIM), dtype=complex)
    h = dt / REFERENCE_SUBSTEPS
    one_step = _one_step_matrix(lindblad_generator(cfg), h)
    power_cache: dict[int, np.ndarray] = {}
    vec = rho0.reshape(-1).astype(complex)
    out = np.empty((times.size, DIM, DIM), dtype=complex)
    prev = 0
    for i, t in enumerate(times):
        k = round(t / h)
        if k < prev:
            raise ValueError("reference times must be nondecreasing")
        gap = k - prev
        if gap not in power_cache:
            power_cache[gap] = np.linalg.matrix_power(one_step, gap)
        vec = power_cache[gap] @ vec
        prev = k
        out[i] = vec.reshape(DIM, DIM)
    return out


def lindblad_fidelity(cfg: ModelConfig, rho0: np.ndarray, times: np.ndarray,
                      dt: float, target: np.ndarray | None = None) -> np.ndarray:
    """Fidelity of the unconditional state to a pure target over time."""
    if target is None:
        target = target_states()["pre_ghz"]
    states = lindblad_states(cfg, rho0, times, dt)
    return np.array([fidelity(rho, target) for rho in states])
