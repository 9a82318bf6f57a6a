"""Closed-loop decision logic conditioned on measurement verdicts.

Three regimes share one gate vocabulary. During generation, each nonzero
verdict triggers rotations that route the collapsed state back toward the
equal superposition or directly into the target subspace; a zero verdict
hands over to stabilization. During stabilization, all three qubits are
flipped together every interval tau, which cancels the amplitude imbalance
accumulated by the asymmetric no-decay drift of the two target components.
Error recovery reuses the generation rules, with one extra twist: a zero
verdict reached right after a +-2 recovery may be an incoherent mixture of
the two target components, indistinguishable from the target by its current,
so the third qubit is flipped once to convert it into a +-4-detectable
mixture and re-run generation. If the state actually was the target, that
detour costs time but never correctness.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from functools import lru_cache

import numpy as np

from .algebra import SIGMA_X, embed_single_qubit, is_unitary

DEFAULT_TAU = 3.0

# y-axis rotations fixed by their action on the computational basis:
# quarter turn sends |1> to (|0>+|1>)/sqrt(2), three-quarter turn sends
# |0> to (|0>+|1>)/sqrt(2); the orthogonal images follow from unitarity.
_Y_QUARTER = np.array([[1.0, 1.0], [-1.0, 1.0]], dtype=complex) / np.sqrt(2.0)
_Y_THREEQUARTER = np.array([[1.0, -1.0], [1.0, 1.0]], dtype=complex) / np.sqrt(2.0)


class Phase(IntEnum):
    GENERATING = 0
    STABILIZING = 1
    RECOVERING = 2
    DONE = 3


class RecoveryContext(IntEnum):
    NONE = 0
    AFTER_PM2 = 1
    AFTER_PM4 = 2


class Mode(str, Enum):
    GENERATE_ONLY = "generate_only"
    ZENO_ONLY = "zeno_only"
    AFIZ = "afiz"
    AFIZ_WITH_RECOVERY = "afiz_with_recovery"
    UNCONTROLLED = "uncontrolled"


@dataclass(frozen=True)
class GateCommand:
    kind: str  # "x_flip" | "y_rot" | "flip_all"
    qubit: int = 0
    quarters: int = 0  # 1 -> pi/2 rotation, 3 -> 3pi/2 rotation
    issued_at: float = 0.0

    def key(self) -> tuple:
        if self.kind == "x_flip":
            return ("x_flip", self.qubit)
        if self.kind == "y_rot":
            return ("y_rot", self.qubit, self.quarters)
        return ("flip_all",)


@lru_cache(maxsize=1)
def gate_table() -> dict[tuple, np.ndarray]:
    """Verified unitaries for every gate the policies can emit."""
    table: dict[tuple, np.ndarray] = {}
    for q in (1, 2, 3):
        table[("x_flip", q)] = embed_single_qubit(SIGMA_X, q)
        table[("y_rot", q, 1)] = embed_single_qubit(_Y_QUARTER, q)
        table[("y_rot", q, 3)] = embed_single_qubit(_Y_THREEQUARTER, q)
    flip_all = np.eye(8, dtype=complex)
    for q in (1, 2, 3):
        flip_all = table[("x_flip", q)] @ flip_all
    table[("flip_all",)] = flip_all
    for key, U in table.items():
        assert is_unitary(U, 1e-12), key
    return table


def gate_unitary(cmd: GateCommand) -> np.ndarray:
    return gate_table()[cmd.key()]


def combined_unitary(cmds: list[GateCommand]) -> np.ndarray:
    out = np.eye(8, dtype=complex)
    for cmd in cmds:
        out = gate_unitary(cmd) @ out
    return out


@dataclass(frozen=True)
class ControllerState:
    phase: Phase = Phase.GENERATING
    last_flip_time: float = 0.0
    tau: float = DEFAULT_TAU
    context: RecoveryContext = RecoveryContext.NONE


def gates_for_level(level: float, t: float) -> list[GateCommand]:
    """Rotation sequence responding to a nonzero collapse level.

    +-2 outcomes flip qubit 1 and rotate qubit 3 into a superposition whose
    zero-current branch is the target; +-4 outcomes rotate every qubit back
    to the equal superposition (quarter turn from the all-excited state,
    three-quarter turn from the ground state).
    """
    if level == 0:
        return []
    if level == 2:
        return [GateCommand("x_flip", 1, issued_at=t),
                GateCommand("y_rot", 3, 1, issued_at=t)]
    if level == -2:
        return [GateCommand("x_flip", 1, issued_at=t),
                GateCommand("y_rot", 3, 3, issued_at=t)]
    quarters = 1 if level > 0 else 3
    return [GateCommand("y_rot", q, quarters, issued_at=t) for q in (1, 2, 3)]


def generation_policy(cs: ControllerState, level: float,
                      t: float) -> tuple[list[GateCommand], ControllerState]:
    """React to a verdict while generating the target state."""
    if level == 0:
        return [], replace(cs, phase=Phase.STABILIZING, last_flip_time=t)
    return gates_for_level(level, t), cs


def afiz_policy(cs: ControllerState, t: float) -> tuple[list[GateCommand], ControllerState]:
    """Emit the periodic global flip while stabilizing."""
    if cs.phase is not Phase.STABILIZING or t < cs.last_flip_time + cs.tau:
        return [], cs
    return ([GateCommand("flip_all", issued_at=t)],
            replace(cs, last_flip_time=cs.last_flip_time + cs.tau))


def recovery_policy(cs: ControllerState, level: float,
                    t: float) -> tuple[list[GateCommand], ControllerState]:
    """React to a verdict while stabilizing or recovering.

    A +-2 verdict that interrupts stabilization may be the incoherent decay
    mixture, so it arms the disambiguation flip for the next zero verdict. A
    +-2 verdict during an ongoing recovery comes from the coherent
    regeneration roulette (the decay mixtures can only produce 0 or +-4
    after their response gates), so it must not re-arm the flip: doing so
    would discard the coherent zero branch every round. A +-4 verdict means
    the state has collapsed onto a basis state, which erases any mixture
    suspicion.
    """
    if level != 0:
        if abs(level) == 2:
            ctx = (RecoveryContext.AFTER_PM2 if cs.phase is Phase.STABILIZING
                   else cs.context)
        else:
            ctx = RecoveryContext.AFTER_PM4
        return gates_for_level(level, t), replace(cs, phase=Phase.RECOVERING, context=ctx)
    if cs.context is RecoveryContext.AFTER_PM2:
        # zero current after a +-2 recovery may be the incoherent mixture of
        # the two target components; flip qubit 3 so it shows up at +-4
        return ([GateCommand("x_flip", 3, issued_at=t)],
                replace(cs, context=RecoveryContext.NONE))
    if cs.phase is Phase.STABILIZING:
        # repeated zero verdict while stabilizing; keep the flip clock
        return [], cs
    return [], replace(cs, phase=Phase.STABILIZING, last_flip_time=t,
                       context=RecoveryContext.NONE)
