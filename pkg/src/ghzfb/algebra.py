"""Dense operator algebra on the three-qubit (8-dimensional) Hilbert space.

Basis convention: index b in 0..7 encodes |q1 q2 q3> with qubit 1 the most
significant bit; sigma_z|1> = +|1>, sigma_z|0> = -|0>, sigma_minus|1> = |0>.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DIM = 8
N_QUBITS = 3

# single-qubit matrices in the (|0>, |1>) ordering fixed above
SIGMA_Z = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
SIGMA_PLUS = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8
UNITARITY_TOL = 1e-10


def qubit_bit(index: int, qubit: int) -> int:
    """Bit of ``qubit`` (1..3, MSB first) in basis index ``index``."""
    return (index >> (N_QUBITS - qubit)) & 1


def basis_ket(index: int) -> np.ndarray:
    psi = np.zeros(DIM, dtype=complex)
    psi[index] = 1.0
    return psi


def ket(amplitudes: dict[int, complex]) -> np.ndarray:
    """Normalized pure state from a sparse {basis index: amplitude} map."""
    psi = np.zeros(DIM, dtype=complex)
    for idx, amp in amplitudes.items():
        psi[idx] = amp
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise ValueError("state has zero norm")
    return psi / norm


def projector(psi: np.ndarray) -> np.ndarray:
    return np.outer(psi, psi.conj())


def embed_single_qubit(op: np.ndarray, qubit: int) -> np.ndarray:
    """Embed a 2x2 operator as I x ... x op x ... x I at position ``qubit``."""
    op = np.asarray(op, dtype=complex)
    if op.shape != (2, 2):
        raise ValueError(f"expected a 2x2 operator, got shape {op.shape}")
    if qubit not in (1, 2, 3):
        raise ValueError(f"qubit index must be 1..3, got {qubit}")
    factors = [IDENTITY_2, IDENTITY_2, IDENTITY_2]
    factors[qubit - 1] = op
    out = factors[0]
    for f in factors[1:]:
        out = np.kron(out, f)
    return out


def dissipator(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Lindblad dissipator L rho L^dag - (1/2){L^dag L, rho}."""
    Ldag = L.conj().T
    LdL = Ldag @ L
    return L @ rho @ Ldag - 0.5 * (LdL @ rho + rho @ LdL)


def unravel(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Measurement innovation superoperator L rho + rho L^dag - Tr[(L+L^dag) rho] rho."""
    Ldag = L.conj().T
    mean = np.trace((L + Ldag) @ rho)
    return L @ rho + rho @ Ldag - mean * rho


def is_unitary(U: np.ndarray, tol: float = UNITARITY_TOL) -> bool:
    return bool(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) <= tol)


def apply_unitary(U: np.ndarray, rho: np.ndarray) -> np.ndarray:
    if not is_unitary(U):
        raise ValueError("operator is not unitary within tolerance")
    return U @ rho @ U.conj().T


def expectation(A: np.ndarray, rho: np.ndarray) -> float:
    """Tr[A rho] for Hermitian A; the imaginary residue is discarded."""
    return float(np.trace(A @ rho).real)


def fidelity(rho: np.ndarray, target: np.ndarray) -> float:
    """<psi|rho|psi> for a pure target, clamped to [0, 1]."""
    val = (target.conj() @ rho @ target).real
    return float(min(1.0, max(0.0, val)))


@dataclass
class StateReport:
    hermiticity_error: float
    trace_error: float
    min_eigenvalue: float

    @property
    def hermitian_ok(self) -> bool:
        return self.hermiticity_error <= HERMITICITY_TOL

    @property
    def trace_ok(self) -> bool:
        return self.trace_error <= TRACE_TOL

    @property
    def positive_ok(self) -> bool:
        return self.min_eigenvalue >= -POSITIVITY_TOL

    @property
    def ok(self) -> bool:
        return self.hermitian_ok and self.trace_ok and self.positive_ok


def validate_state(rho: np.ndarray) -> StateReport:
    """Diagnostic check of the density-matrix invariants (never raises)."""
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    tr = float(abs(np.trace(rho) - 1.0))
    sym = 0.5 * (rho + rho.conj().T)
    min_eig = float(np.linalg.eigvalsh(sym)[0])
    return StateReport(hermiticity_error=herm, trace_error=tr, min_eigenvalue=min_eig)
