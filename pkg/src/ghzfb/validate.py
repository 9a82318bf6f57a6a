"""Fast self-check suite behind the ``validate`` CLI subcommand.

Each check prints one PASS/FAIL line; the runner returns the number of
failures. The whole suite is meant to finish in well under a minute.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .algebra import dissipator, fidelity, unravel, validate_state
from .config import RunConfig
from .controller import gate_table
from .engine import run_batch, run_trajectory
from .integrator import NoiseSource, make_kernel
from .model import ModelConfig, build_jz, target_states


def _random_density(rng: np.random.Generator) -> np.ndarray:
    m = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    rho = m @ m.conj().T
    return rho / np.trace(rho).real


def check_superoperator_traces() -> list[str]:
    rng = np.random.default_rng(7)
    jz = build_jz((1.0, 1.0, 2.0))
    errs = []
    for _ in range(25):
        rho = _random_density(rng)
        hermitian = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        hermitian = hermitian + hermitian.conj().T
        for op in (jz, hermitian):
            errs.append(abs(np.trace(dissipator(op, rho))))
            errs.append(abs(np.trace(unravel(op, rho))))
    if max(errs) > 1e-12:
        return [f"FAIL superoperator-traceless (max |trace| = {max(errs):.2e})"]
    return ["PASS superoperator-traceless"]


def check_gate_unitarity() -> list[str]:
    worst = 0.0
    for U in gate_table().values():
        worst = max(worst, float(np.max(np.abs(U.conj().T @ U - np.eye(8)))))
    if worst > 1e-12:
        return [f"FAIL gate-unitarity (deviation {worst:.2e})"]
    return ["PASS gate-unitarity"]


def check_eigenstate_fixed_point() -> list[str]:
    cfg = ModelConfig(gamma_d=1.0, eta=1.0)
    kernel = make_kernel(cfg)
    psi = target_states()["pre_ghz"]
    rho = np.outer(psi, psi.conj())
    worst = 0.0
    from .integrator import advance

    for dW in (0.05, -0.08, 0.0):
        out, _ = advance(kernel, rho, 1e-3, dW)
        worst = max(worst, float(np.max(np.abs(out - rho))))
    if worst > 1e-10:
        return [f"FAIL measurement-fixed-point (drift {worst:.2e})"]
    return ["PASS measurement-fixed-point"]


def check_state_sanity() -> list[str]:
    cfg = RunConfig(mode="zeno_only", initial_state="plus",
                    gamma=(0.01, 0.01, 0.01), duration=5.0, base_seed=99)
    batch = run_batch(cfg, list(range(8)))
    lines = []
    worst_trace = worst_herm = 0.0
    min_eig = 0.0
    for rho in batch.final_states:
        rep = validate_state(rho)
        worst_trace = max(worst_trace, rep.trace_error)
        worst_herm = max(worst_herm, rep.hermiticity_error)
        min_eig = min(min_eig, rep.min_eigenvalue)
    ok = worst_trace <= 1e-9 and worst_herm <= 1e-10
    lines.append(("PASS" if ok else "FAIL")
                 + f" trajectory-trace-hermiticity (trace {worst_trace:.2e}, herm {worst_herm:.2e})")
    # explicit Euler allows transient negativity of order dt
    eig_ok = min_eig >= -50.0 * cfg.dt
    lines.append(("PASS" if eig_ok else "FAIL")
                 + f" trajectory-positivity (min eigenvalue {min_eig:.2e})")
    return lines


def check_seeded_reproducibility() -> list[str]:
    cfg = RunConfig(mode="afiz_with_recovery", initial_state="pre_ghz",
                    gamma=(0.01, 0.01, 0.01), duration=4.0, base_seed=2024,
                    save_trajectories=1)
    a = run_trajectory(cfg, 3)
    b = run_trajectory(cfg, 3)
    same = (
        np.array_equal(a.fidelity, b.fidelity)
        and np.array_equal(a.i_filtered, b.i_filtered)
        and np.array_equal(a.final_state, b.final_state)
        and a.events == b.events
    )
    if not same:
        return ["FAIL seeded-reproducibility (reruns differ)"]
    s1 = NoiseSource(11, 5).normals(64)
    s2 = NoiseSource(11, 5).normals(64)
    if not np.array_equal(s1, s2):
        return ["FAIL seeded-reproducibility (noise streams differ)"]
    return ["PASS seeded-reproducibility"]


def check_fidelity_bounds() -> list[str]:
    rng = np.random.default_rng(3)
    target = target_states()["pre_ghz"]
    for _ in range(50):
        f = fidelity(_random_density(rng), target)
        if not 0.0 <= f <= 1.0:
            return [f"FAIL fidelity-range (value {f})"]
    return ["PASS fidelity-range"]


def run_validation(verbose: bool = True) -> int:
    checks = (
        check_superoperator_traces,
        check_gate_unitarity,
        check_eigenstate_fixed_point,
        check_fidelity_bounds,
        check_state_sanity,
        check_seeded_reproducibility,
    )
    failures = 0
    for check in checks:
        for line in check():
            if verbose:
                print(line)
            if line.startswith("FAIL"):
                failures += 1
    return failures
