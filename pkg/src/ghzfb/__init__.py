"""Closed-loop quantum-trajectory simulation of three dispersively measured
qubits: joint-readout generation of the pre-GHZ state, flip-interrupted Zeno
stabilization, and current-triggered error recovery."""

from .algebra import (
    dissipator,
    embed_single_qubit,
    expectation,
    fidelity,
    unravel,
    validate_state,
)
from .config import PRESETS, RunConfig, load_config, parse_config, preset_config
from .controller import ControllerState, GateCommand, Mode, Phase, gate_table
from .engine import run_batch, run_ensemble, run_trajectory
from .filtering import Discriminator, FilterParams, FilterState, Verdict
from .integrator import NoiseSource, null_result_amplitudes, run_segment, step
from .model import (
    ModelConfig,
    PhysicalParams,
    SimRates,
    build_jz,
    derive_rates,
    liouvillian_apply,
    target_states,
)
from .reference import lindblad_fidelity, lindblad_states
from .results import EnsembleResult, TrajectoryResult, read_state, read_table

__version__ = "0.1.0"
