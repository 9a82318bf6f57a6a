"""Batched closed-loop trajectory execution.

All trajectories of a batch advance in lockstep. The hot path (state update,
homodyne filter, dwell discriminator) is a numba kernel that loops over
trajectories, so one step costs a few hundred floating-point operations per
trajectory with no array temporaries; the rare verdict events bubble up as a
boolean mask and are handled one trajectory at a time through the scalar
policy functions. Per step, in order:

    1. draw the Wiener increments for the step,
    2. advance the conditional states and form the raw current increments,
    3. update the filter and the level discriminator,
    4. process newly fired verdicts (gates, phase changes, filter resets),
    5. issue the periodic global flips that are due,
    6. record a sample every ``record_stride`` steps.

Each trajectory owns one counter-based noise stream keyed by
(base_seed, index), so results are independent of batch size, chunking, and
worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np

from .algebra import DIM
from .config import RunConfig
from .controller import (
    ControllerState,
    Mode,
    Phase,
    RecoveryContext,
    combined_unitary,
    generation_policy,
    recovery_policy,
)
from .integrator import ABORT_DIAG_TOL, NoiseSource, StepKernel, make_kernel
from .model import target_states
from .results import EnsembleResult, TrajectoryResult

NOISE_BLOCK = 4096


class TrajectoryFailure(RuntimeError):
    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(
            f"trajectories {self.indices} lost positivity; reduce the time step dt"
        )


@nb.njit(cache=True, parallel=True)
def _step_all(rho, scratch, elem_dt, wsum, w, gq_dt, src, dst,
              dW, dt, hcoef, sqrt_gm, measurement, oracle,
              acc, mass, decay, mass_incr, band, dwell_req,
              cand, dwell_t, reported, alive, ibar, fired, bad):  # pragma: no cover
    n = rho.shape[0]
    for i in nb.prange(n):
        fired[i] = False
        if not alive[i]:
            continue
        jz = 0.0
        for r in range(8):
            jz += w[r] * rho[i, r, r].real
        coef = hcoef * dW[i] if measurement else 0.0
        for r in range(8):
            for c in range(8):
                m = elem_dt[r, c] + coef * (wsum[r, c] - 2.0 * jz)
                scratch[i, r, c] = m * rho[i, r, c]
        for q in range(3):
            g = gq_dt[q]
            if g == 0.0:
                continue
            for a in range(4):
                da = dst[q, a]
                sa = src[q, a]
                for b in range(4):
                    scratch[i, da, dst[q, b]] += g * rho[i, sa, src[q, b]]
        trace = 0.0
        min_diag = 1e300
        for r in range(8):
            d = scratch[i, r, r].real
            trace += d
            if d < min_diag:
                min_diag = d
        if not np.isfinite(trace) or trace <= 0.0 or min_diag < -ABORT_DIAG_TOL:
            bad[i] = True
            alive[i] = False
            continue
        inv = 1.0 / trace
        for r in range(8):
            rho[i, r, r] = complex(scratch[i, r, r].real * inv, 0.0)
            for c in range(r + 1, 8):
                v = 0.5 * (scratch[i, r, c] + np.conj(scratch[i, c, r])) * inv
                rho[i, r, c] = v
                rho[i, c, r] = np.conj(v)
        if not measurement:
            continue
        dI = sqrt_gm * jz * dt + dW[i]
        acc[i] = acc[i] * decay + dI
        mass[i] = mass[i] * decay + mass_incr
        if oracle:
            est = jz
        else:
            est = acc[i] / (sqrt_gm * mass[i])
        ibar[i] = est
        li = int(np.floor((est + 4.0) / 2.0 + 0.5))
        if li < 0:
            li = 0
        elif li > 4:
            li = 4
        if abs(est - (li * 2.0 - 4.0)) <= band:
            if cand[i] == li:
                dwell_t[i] += dt
            else:
                cand[i] = li
                dwell_t[i] = dt
                reported[i] = False
            if dwell_t[i] >= dwell_req and not reported[i]:
                fired[i] = True
                reported[i] = True
        else:
            cand[i] = -1
            dwell_t[i] = 0.0
            reported[i] = False


@dataclass
class BatchResult:
    indices: list[int]
    times: np.ndarray
    record_rows: dict[int, int]
    fidelity: np.ndarray
    jz_expect: np.ndarray
    i_filtered: np.ndarray
    phase: np.ndarray
    pop_001: np.ndarray
    pop_110: np.ndarray
    events: list[list[tuple[float, str, str]]]
    final_states: np.ndarray
    done_times: np.ndarray
    terminal_fidelities: np.ndarray
    failed: list[int]
    fid_sum: np.ndarray
    fid_sumsq: np.ndarray
    valid_count: np.ndarray
    checkpoint_times: np.ndarray | None = None
    checkpoint_sum: np.ndarray | None = None
    checkpoint_sumsq_re: np.ndarray | None = None
    checkpoint_sumsq_im: np.ndarray | None = None
    checkpoint_count: np.ndarray | None = None


def initial_density(cfg: RunConfig) -> np.ndarray:
    psi = target_states()[cfg.resolved_initial_state()]
    return np.outer(psi, psi.conj())


def _initial_phase(cfg: RunConfig) -> Phase:
    mode = Mode(cfg.mode)
    if mode is Mode.GENERATE_ONLY:
        return Phase.GENERATING
    if mode is Mode.AFIZ_WITH_RECOVERY and cfg.resolved_initial_state() == "plus":
        return Phase.GENERATING
    return Phase.STABILIZING


def _refill_tables(kernel: StepKernel, dt: float):
    """Per-qubit decay refill (gamma dt, source rows, destination rows)."""
    gq_dt = np.zeros(3)
    src = np.zeros((3, 4), dtype=np.int64)
    dst = np.zeros((3, 4), dtype=np.int64)
    for q, (g, s, d) in enumerate(kernel.refills):
        gq_dt[q] = g * dt
        src[q] = s
        dst[q] = d
    return gq_dt, src, dst


def run_batch(cfg: RunConfig, indices, record=None,
              checkpoint_times=None) -> BatchResult:
    """Run the closed loop for the given trajectory indices in lockstep."""
    cfg.validate()
    indices = list(indices)
    n = len(indices)
    mode = Mode(cfg.mode)
    kernel = make_kernel(cfg.model_config())
    fparams = cfg.filter_params()
    dt = cfg.dt
    stride = cfg.effective_stride()
    n_steps = int(np.ceil(cfg.duration / dt - 1e-12))
    measurement_on = kernel.gamma_m > 0.0 and mode is not Mode.UNCONTROLLED
    oracle = cfg.indicator == "oracle"
    feedback = mode in (Mode.GENERATE_ONLY, Mode.AFIZ_WITH_RECOVERY)
    flips = mode in (Mode.AFIZ, Mode.AFIZ_WITH_RECOVERY)

    target = target_states()["pre_ghz"]
    tconj = target.conj()

    rho = np.broadcast_to(initial_density(cfg), (n, DIM, DIM)).copy()
    scratch = np.empty_like(rho)
    # identity of the elementwise product is the all-ones matrix
    elem_dt = np.ascontiguousarray(np.ones((DIM, DIM)) + dt * kernel.elem)
    gq_dt, src, dst = _refill_tables(kernel, dt)

    phase = np.full(n, int(_initial_phase(cfg)), dtype=np.int8)
    context = np.full(n, int(RecoveryContext.NONE), dtype=np.int8)
    last_flip = np.zeros(n)
    acc = np.zeros(n)
    mass = np.zeros(n)
    cand = np.full(n, -1, dtype=np.int8)
    dwell_t = np.zeros(n)
    reported = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    ibar = np.zeros(n)
    fired = np.zeros(n, dtype=bool)
    bad = np.zeros(n, dtype=bool)
    done_times = np.full(n, np.nan)
    terminal_fids = np.full(n, np.nan)
    events: list[list[tuple[float, str, str]]] = [[] for _ in range(n)]
    final_states = np.zeros((n, DIM, DIM), dtype=complex)
    failed_positions: set[int] = set()
    # rows of finished trajectories can be dropped from the working set; orig
    # maps the current row to its original position in ``indices``
    orig = np.arange(n)
    frozen_fid_sum = 0.0
    frozen_fid_sumsq = 0.0
    frozen_count = 0

    record = sorted(set(record or []))
    record_rows = {idx: r for r, idx in enumerate(record)}
    rec_pos = np.array([indices.index(idx) for idx in record], dtype=int)
    compactable = (cfg.stop_on_done and mode is Mode.GENERATE_ONLY
                   and not record and checkpoint_times is None)
    n_samples = n_steps // stride + 1
    times = np.arange(n_samples) * (stride * dt)
    rec_fid = np.zeros((len(record), n_samples))
    rec_jz = np.zeros((len(record), n_samples))
    rec_ibar = np.zeros((len(record), n_samples))
    rec_phase = np.zeros((len(record), n_samples), dtype=np.int8)
    rec_p001 = np.zeros((len(record), n_samples))
    rec_p110 = np.zeros((len(record), n_samples))
    fid_sum = np.zeros(n_samples)
    fid_sumsq = np.zeros(n_samples)
    valid_count = np.zeros(n_samples, dtype=int)

    if checkpoint_times is not None:
        checkpoint_times = np.asarray(checkpoint_times, dtype=float)
        cp_lookup = {int(s): i for i, s in
                     enumerate(np.round(checkpoint_times / dt).astype(int))}
        cp_sum = np.zeros((len(cp_lookup), DIM, DIM), dtype=complex)
        cp_sumsq_re = np.zeros((len(cp_lookup), DIM, DIM))
        cp_sumsq_im = np.zeros((len(cp_lookup), DIM, DIM))
        cp_count = np.zeros(len(cp_lookup), dtype=int)
    else:
        cp_lookup = {}
        cp_sum = cp_sumsq_re = cp_sumsq_im = cp_count = None

    streams = [NoiseSource(cfg.base_seed, idx) for idx in indices]
    block = np.zeros((n, min(NOISE_BLOCK, max(1, n_steps))))
    sqrt_dt = np.sqrt(dt)
    decay = float(np.exp(-fparams.gamma_ft * dt))
    mass_incr = (1.0 - decay) / fparams.gamma_ft
    sqrt_gm = kernel.sqrt_gm
    jz_w = np.ascontiguousarray(kernel.jz_diag, dtype=float)
    wsum = np.ascontiguousarray(kernel.wsum.real, dtype=float)
    zero_dw = np.zeros(n)

    def batch_fidelity() -> np.ndarray:
        tmp = rho @ target
        return np.clip((tmp * tconj).sum(axis=-1).real, 0.0, 1.0)

    def record_sample(s: int) -> None:
        fid = batch_fidelity()
        fid_sum[s] += fid[alive].sum() + frozen_fid_sum
        fid_sumsq[s] += (fid[alive] ** 2).sum() + frozen_fid_sumsq
        valid_count[s] += int(alive.sum()) + frozen_count
        if len(record):
            rec_fid[:, s] = fid[rec_pos]
            rec_jz[:, s] = kernel.jz_mean(rho[rec_pos])
            rec_ibar[:, s] = ibar[rec_pos]
            rec_phase[:, s] = phase[rec_pos]
            rec_p001[:, s] = rho[rec_pos, 1, 1].real
            rec_p110[:, s] = rho[rec_pos, 6, 6].real

    record_sample(0)

    for k in range(n_steps):
        t_next = (k + 1) * dt
        col = k % block.shape[1]
        if measurement_on:
            if col == 0:
                width = min(block.shape[1], n_steps - k)
                for i, stream in enumerate(streams):
                    block[i, :width] = stream.normals(width)
            dW = block[:, col] * sqrt_dt
        else:
            dW = zero_dw

        _step_all(rho, scratch, elem_dt, wsum, jz_w, gq_dt, src, dst,
                  dW, dt, kernel.hcoef, sqrt_gm, measurement_on, oracle,
                  acc, mass, decay, mass_incr, fparams.band, fparams.dwell,
                  cand, dwell_t, reported, alive, ibar, fired, bad)
        if bad.any():
            for i in np.flatnonzero(bad):
                events[int(orig[i])].append((t_next, "abort",
                                             "positivity lost; reduce dt"))
                failed_positions.add(int(orig[i]))
            bad[:] = False

        if fired.any():
            for i in np.flatnonzero(fired):
                pos = int(orig[i])
                level = float(cand[i] * 2.0 - 4.0)
                events[pos].append((t_next, "verdict", repr(level)))
                if not feedback or phase[i] == int(Phase.DONE):
                    continue
                cs = ControllerState(
                    phase=Phase(int(phase[i])),
                    last_flip_time=float(last_flip[i]),
                    tau=cfg.tau,
                    context=RecoveryContext(int(context[i])),
                )
                if cs.phase is Phase.GENERATING:
                    cmds, cs = generation_policy(cs, level, t_next)
                else:
                    cmds, cs = recovery_policy(cs, level, t_next)
                if cmds:
                    U = combined_unitary(cmds)
                    rho[i] = U @ rho[i] @ U.conj().T
                    acc[i] = 0.0
                    mass[i] = 0.0
                    cand[i] = -1
                    dwell_t[i] = 0.0
                    reported[i] = False
                    for cmd in cmds:
                        events[pos].append((t_next, "gate", _gate_label(cmd)))
                if cs.phase is Phase.STABILIZING and phase[i] != int(Phase.STABILIZING):
                    if mode is Mode.GENERATE_ONLY:
                        cs = ControllerState(Phase.DONE, cs.last_flip_time, cs.tau,
                                             cs.context)
                        done_times[pos] = t_next
                        terminal_fids[pos] = float(np.clip(
                            (tconj @ rho[i] @ target).real, 0.0, 1.0))
                        events[pos].append((t_next, "done",
                                            repr(float(terminal_fids[pos]))))
                    else:
                        events[pos].append((t_next, "phase", "stabilizing"))
                phase[i] = int(cs.phase)
                context[i] = int(cs.context)
                last_flip[i] = cs.last_flip_time

        if flips:
            due = (phase == int(Phase.STABILIZING)) & alive & \
                (t_next >= last_flip + cfg.tau - 1e-9)
            if due.any():
                # X x X x X reverses the basis order and flips the sign of Jz;
                # the filter memory is negated and the candidate mirrored so
                # no dwell history is lost across the flip
                rho[due] = rho[due][:, ::-1, ::-1]
                acc[due] = -acc[due]
                cand[due] = np.where(cand[due] >= 0, 4 - cand[due], -1)
                last_flip[due] += cfg.tau
                for i in np.flatnonzero(due):
                    events[int(orig[i])].append((t_next, "gate", "flip_all"))

        if k + 1 in cp_lookup:
            ci = cp_lookup[k + 1]
            cp_sum[ci] += rho[alive].sum(axis=0)
            cp_sumsq_re[ci] += (rho[alive].real ** 2).sum(axis=0)
            cp_sumsq_im[ci] += (rho[alive].imag ** 2).sum(axis=0)
            cp_count[ci] += int(alive.sum())

        if (k + 1) % stride == 0:
            record_sample((k + 1) // stride)

        if cfg.stop_on_done and mode is Mode.GENERATE_ONLY and \
                np.all((phase == int(Phase.DONE)) | ~alive):
            n_kept = (k + 1) // stride + 1
            times = times[:n_kept]
            rec_fid, rec_jz, rec_ibar = (rec_fid[:, :n_kept], rec_jz[:, :n_kept],
                                         rec_ibar[:, :n_kept])
            rec_phase, rec_p001, rec_p110 = (rec_phase[:, :n_kept],
                                             rec_p001[:, :n_kept],
                                             rec_p110[:, :n_kept])
            fid_sum, fid_sumsq, valid_count = (fid_sum[:n_kept], fid_sumsq[:n_kept],
                                               valid_count[:n_kept])
            break

        if compactable and rho.shape[0] > 16:
            inactive = (phase == int(Phase.DONE)) | ~alive
            if inactive.mean() > 0.5:
                # park finished rows: their handover fidelity keeps feeding
                # the per-sample aggregates, their state is frozen
                for r in np.flatnonzero(inactive):
                    p = int(orig[r])
                    final_states[p] = rho[r]
                    if phase[r] == int(Phase.DONE):
                        frozen_fid_sum += terminal_fids[p]
                        frozen_fid_sumsq += terminal_fids[p] ** 2
                        frozen_count += 1
                keep = ~inactive
                orig = orig[keep]
                rho = np.ascontiguousarray(rho[keep])
                scratch = np.empty_like(rho)
                phase = phase[keep].copy()
                context = context[keep].copy()
                last_flip = last_flip[keep].copy()
                acc = acc[keep].copy()
                mass = mass[keep].copy()
                cand = cand[keep].copy()
                dwell_t = dwell_t[keep].copy()
                reported = reported[keep].copy()
                alive = alive[keep].copy()
                ibar = ibar[keep].copy()
                fired = np.zeros(orig.size, dtype=bool)
                bad = np.zeros(orig.size, dtype=bool)
                block = np.ascontiguousarray(block[keep])
                streams = [streams[r] for r in np.flatnonzero(keep)]
                zero_dw = np.zeros(orig.size)

    for r, p in enumerate(orig):
        final_states[int(p)] = rho[r]
    return BatchResult(
        indices=indices,
        times=times,
        record_rows=record_rows,
        fidelity=rec_fid,
        jz_expect=rec_jz,
        i_filtered=rec_ibar,
        phase=rec_phase,
        pop_001=rec_p001,
        pop_110=rec_p110,
        events=events,
        final_states=final_states,
        done_times=done_times,
        terminal_fidelities=terminal_fids,
        failed=sorted(indices[p] for p in failed_positions),
        fid_sum=fid_sum,
        fid_sumsq=fid_sumsq,
        valid_count=valid_count,
        checkpoint_times=checkpoint_times,
        checkpoint_sum=cp_sum,
        checkpoint_sumsq_re=cp_sumsq_re,
        checkpoint_sumsq_im=cp_sumsq_im,
        checkpoint_count=cp_count,
    )


def _gate_label(cmd) -> str:
    if cmd.kind == "x_flip":
        return f"x_flip({cmd.qubit})"
    if cmd.kind == "y_rot":
        return f"y_rot({cmd.qubit};{cmd.quarters})"
    return "flip_all"


def trajectory_from_batch(batch: BatchResult, index: int) -> TrajectoryResult:
    row = batch.record_rows[index]
    pos = batch.indices.index(index)
    done = batch.done_times[pos]
    return TrajectoryResult(
        index=index,
        times=batch.times.copy(),
        fidelity=batch.fidelity[row].copy(),
        jz_expect=batch.jz_expect[row].copy(),
        i_filtered=batch.i_filtered[row].copy(),
        phase=batch.phase[row].copy(),
        pop_001=batch.pop_001[row].copy(),
        pop_110=batch.pop_110[row].copy(),
        events=list(batch.events[pos]),
        final_state=batch.final_states[pos].copy(),
        done_time=None if np.isnan(done) else float(done),
        terminal_fidelity=None if np.isnan(done) else float(batch.terminal_fidelities[pos]),
    )


def run_trajectory(cfg: RunConfig, index: int) -> TrajectoryResult:
    """One trajectory, deterministic in (config, base_seed, index)."""
    batch = run_batch(cfg, [index], record=[index])
    if batch.failed:
        raise TrajectoryFailure(batch.failed)
    return trajectory_from_batch(batch, index)


def _run_chunk(args) -> BatchResult:
    cfg, chunk, record, checkpoints = args
    return run_batch(cfg, chunk, record=record, checkpoint_times=checkpoints)


def run_ensemble(cfg: RunConfig, checkpoint_times=None,
                 chunk_size: int = 1000) -> tuple[EnsembleResult, list[TrajectoryResult]]:
    """Run cfg.n_trajectories trajectories and aggregate.

    Returns the ensemble aggregate plus full series for the first
    ``cfg.save_trajectories`` trajectories. Aggregation is a plain sum
    reduction, so chunk boundaries and worker count do not affect it.
    """
    cfg.validate()
    all_indices = list(range(cfg.n_trajectories))
    keep = set(all_indices[: max(0, cfg.save_trajectories)])
    chunks = [all_indices[i:i + chunk_size] for i in range(0, len(all_indices), chunk_size)]
    jobs = [(cfg, chunk, sorted(keep.intersection(chunk)), checkpoint_times)
            for chunk in chunks]

    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            batches = list(pool.map(_run_chunk, jobs))
    else:
        batches = [_run_chunk(job) for job in jobs]

    n_samples = min(b.fid_sum.size for b in batches)
    times = batches[0].times[:n_samples]
    fid_sum = sum(b.fid_sum[:n_samples] for b in batches)
    fid_sumsq = sum(b.fid_sumsq[:n_samples] for b in batches)
    count = sum(b.valid_count[:n_samples] for b in batches)
    mean = fid_sum / np.maximum(count, 1)
    var = np.maximum(fid_sumsq - count * mean**2, 0.0) / np.maximum(count - 1, 1)
    stderr = np.sqrt(var / np.maximum(count, 1))

    verdict_counts: dict[float, int] = {}
    sequences: list[list[tuple[float, float]]] = []
    failed: list[int] = []
    done_times = np.full(cfg.n_trajectories, np.nan)
    terminal_fids = np.full(cfg.n_trajectories, np.nan)
    saved: list[TrajectoryResult] = []
    for batch in batches:
        failed.extend(batch.failed)
        for pos, idx in enumerate(batch.indices):
            seq = [(t, float(detail)) for t, kind, detail in batch.events[pos]
                   if kind == "verdict"]
            sequences.append(seq)
            for _, level in seq:
                verdict_counts[level] = verdict_counts.get(level, 0) + 1
            done_times[idx] = batch.done_times[pos]
            terminal_fids[idx] = batch.terminal_fidelities[pos]
        for idx in sorted(batch.record_rows):
            saved.append(trajectory_from_batch(batch, idx))

    result = EnsembleResult(
        times=times,
        mean_fidelity=mean,
        stderr_fidelity=stderr,
        n_trajectories=cfg.n_trajectories,
        verdict_counts=verdict_counts,
        verdict_sequences=sequences,
        failed_indices=sorted(failed),
        done_times=done_times,
        terminal_fidelities=terminal_fids,
    )
    if checkpoint_times is not None:
        cp_sum = sum(b.checkpoint_sum for b in batches)
        cp_sumsq_re = sum(b.checkpoint_sumsq_re for b in batches)
        cp_sumsq_im = sum(b.checkpoint_sumsq_im for b in batches)
        cp_count = sum(b.checkpoint_count for b in batches)
        cnt = np.maximum(cp_count, 1)[:, None, None]
        cp_mean = cp_sum / cnt
        var_re = np.maximum(cp_sumsq_re - cnt * cp_mean.real**2, 0.0) / np.maximum(cnt - 1, 1)
        var_im = np.maximum(cp_sumsq_im - cnt * cp_mean.imag**2, 0.0) / np.maximum(cnt - 1, 1)
        result.checkpoint_times = np.asarray(checkpoint_times, dtype=float)
        result.checkpoint_mean = cp_mean
        result.checkpoint_stderr_re = np.sqrt(var_re / cnt)
        result.checkpoint_stderr_im = np.sqrt(var_im / cnt)
    return result, saved
