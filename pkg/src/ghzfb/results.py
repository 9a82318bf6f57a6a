"""Result containers and the plain-text table format.

Every emitted file starts with a metadata block of ``# key=value`` lines
(always including ``schema_version``), then a comma-separated header row and
data rows. Floats are written with shortest-roundtrip precision so parsing
an emitted file reproduces the in-memory arrays exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = "1"

TRAJECTORY_COLUMNS = ("t", "fidelity", "jz_expect", "i_filtered", "phase",
                      "pop_001", "pop_110")
ENSEMBLE_COLUMNS = ("t", "mean_fidelity", "stderr_fidelity")


class SchemaError(ValueError):
    pass


@dataclass
class TrajectoryResult:
    index: int
    times: np.ndarray
    fidelity: np.ndarray
    jz_expect: np.ndarray
    i_filtered: np.ndarray
    phase: np.ndarray
    pop_001: np.ndarray
    pop_110: np.ndarray
    events: list[tuple[float, str, str]]
    final_state: np.ndarray
    done_time: float | None = None
    terminal_fidelity: float | None = None

    def verdicts(self) -> list[tuple[float, float]]:
        return [(t, float(detail)) for t, kind, detail in self.events if kind == "verdict"]


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean_fidelity: np.ndarray
    stderr_fidelity: np.ndarray
    n_trajectories: int
    verdict_counts: dict[float, int]
    verdict_sequences: list[list[tuple[float, float]]]
    failed_indices: list[int] = field(default_factory=list)
    checkpoint_times: np.ndarray | None = None
    checkpoint_mean: np.ndarray | None = None
    checkpoint_stderr_re: np.ndarray | None = None
    checkpoint_stderr_im: np.ndarray | None = None
    done_times: np.ndarray | None = None
    terminal_fidelities: np.ndarray | None = None

    def first_verdicts(self) -> list[float | None]:
        return [seq[0][1] if seq else None for seq in self.verdict_sequences]

    def time_averaged_fidelity(self) -> float:
        return float(np.mean(self.mean_fidelity))


def _fmt(x) -> str:
    return repr(float(x))


def _write_table(path: str, meta: list[tuple[str, str]], header: tuple[str, ...],
                 columns: list[np.ndarray]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        for key, val in meta:
            fh.write(f"# {key}={val}\n")
        fh.write(",".join(header) + "\n")
        rows = len(columns[0]) if columns else 0
        for r in range(rows):
            fh.write(",".join(_fmt(col[r]) for col in columns) + "\n")


def read_table(path: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Parse a metadata block plus CSV table; rejects files without a schema tag."""
    meta: dict[str, str] = {}
    header: list[str] | None = None
    data: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val
                continue
            if header is None:
                if "schema_version" not in meta:
                    raise SchemaError(f"{path}: metadata block lacks schema_version")
                header = line.split(",")
                continue
            data.append([float(v) for v in line.split(",")])
    if header is None:
        raise SchemaError(f"{path}: no table header found")
    arr = np.array(data) if data else np.zeros((0, len(header)))
    return meta, {name: arr[:, i] for i, name in enumerate(header)}


def _config_meta(cfg) -> list[tuple[str, str]]:
    from .config import config_lines

    return [("cfg." + line.split("=", 1)[0], line.split("=", 1)[1])
            for line in config_lines(cfg)]


def trajectory_path(out_dir: str, name: str, index: int) -> str:
    return os.path.join(out_dir, f"{name}_traj{index:04d}.csv")


def ensemble_path(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, f"{name}_ensemble.csv")


def reference_path(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, f"{name}_reference.csv")


def write_trajectory(path: str, cfg, res: TrajectoryResult) -> None:
    meta = [("kind", "trajectory"), ("index", str(res.index))]
    if res.done_time is not None:
        meta.append(("done_time", _fmt(res.done_time)))
        meta.append(("terminal_fidelity", _fmt(res.terminal_fidelity)))
    meta += _config_meta(cfg)
    cols = [res.times, res.fidelity, res.jz_expect, res.i_filtered,
            res.phase.astype(float), res.pop_001, res.pop_110]
    _write_table(path, meta, TRAJECTORY_COLUMNS, cols)

    events_file = path[:-4] + ".events.csv" if path.endswith(".csv") else path + ".events"
    with open(events_file, "w", encoding="utf-8") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n# kind=events\n")
        fh.write(f"# index={res.index}\n")
        fh.write("t,event,detail\n")
        for t, kind, detail in res.events:
            fh.write(f"{_fmt(t)},{kind},{detail}\n")

    state_file = path[:-4] + ".state.csv" if path.endswith(".csv") else path + ".state"
    write_state(state_file, res.final_state, index=res.index)


def write_state(path: str, rho: np.ndarray, index: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n# kind=state\n")
        if index is not None:
            fh.write(f"# index={index}\n")
        fh.write("i,j,re,im\n")
        for i in range(rho.shape[0]):
            for j in range(rho.shape[1]):
                fh.write(f"{i},{j},{_fmt(rho[i, j].real)},{_fmt(rho[i, j].imag)}\n")


def read_state(path: str) -> tuple[dict[str, str], np.ndarray]:
    meta, cols = read_table(path)
    dim = int(np.max(cols["i"])) + 1
    rho = np.zeros((dim, dim), dtype=complex)
    for i, j, re, im in zip(cols["i"], cols["j"], cols["re"], cols["im"]):
        rho[int(i), int(j)] = re + 1j * im
    return meta, rho


def write_ensemble(path: str, cfg, res: EnsembleResult) -> None:
    counts = ";".join(f"{int(level):+d}:{count}"
                      for level, count in sorted(res.verdict_counts.items()))
    firsts: dict[float, int] = {}
    for v in res.first_verdicts():
        if v is not None:
            firsts[v] = firsts.get(v, 0) + 1
    first_str = ";".join(f"{int(level):+d}:{count}" for level, count in sorted(firsts.items()))
    meta = [
        ("kind", "ensemble"),
        ("n_trajectories", str(res.n_trajectories)),
        ("verdict_counts", counts),
        ("first_verdict_counts", first_str),
        ("failed_indices", ";".join(map(str, res.failed_indices))),
    ]
    meta += _config_meta(cfg)
    _write_table(path, meta, ENSEMBLE_COLUMNS,
                 [res.times, res.mean_fidelity, res.stderr_fidelity])


def write_reference(path: str, cfg, times: np.ndarray, fid: np.ndarray) -> None:
    meta = [("kind", "reference")] + _config_meta(cfg)
    _write_table(path, meta, ("t", "fidelity"), [times, fid])
