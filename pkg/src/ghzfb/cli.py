"""Command-line entry point.

Subcommands: ``run`` (single trajectory), ``ensemble``, ``reference``
(deterministic ensemble-mean oracle), ``validate`` (invariant suite).
Errors exit nonzero after printing one JSON object line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .config import PRESETS, RunConfig, load_config, preset_config
from .engine import run_ensemble, run_trajectory
from .model import ConfigurationError
from .reference import lindblad_fidelity
from .results import (
    ensemble_path,
    reference_path,
    trajectory_path,
    write_ensemble,
    write_reference,
    write_trajectory,
)
from .validate import run_validation


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghzfb", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "integrate a single trajectory and write its records"),
        ("ensemble", "run many trajectories and write the aggregate"),
        ("reference", "integrate the deterministic ensemble-mean oracle"),
        ("validate", "run the invariant self-check suite"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="named scenario")
        p.add_argument("--seed", type=int, help="base seed override")
        p.add_argument("--trajectories", type=int, help="trajectory count override")
        p.add_argument("--mode", help="controller mode override")
        p.add_argument("--duration", type=float, help="duration override")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--record-full", action="store_true",
                       help="record every step instead of every record_stride steps")
        if name == "run":
            p.add_argument("--index", type=int, default=0, help="trajectory index")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = preset_config(args.preset) if args.preset else RunConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.trajectories is not None:
        cfg.n_trajectories = args.trajectories
    if args.mode is not None:
        cfg.mode = args.mode
    if args.duration is not None:
        cfg.duration = args.duration
    if args.out is not None:
        cfg.out_dir = args.out
    if args.record_full:
        cfg.record_full = True
    cfg.validate()
    return cfg


def _cmd_run(cfg: RunConfig, index: int) -> int:
    res = run_trajectory(cfg, index)
    path = trajectory_path(cfg.out_dir, cfg.name, index)
    write_trajectory(path, cfg, res)
    print(f"wrote {path}")
    return 0


def _cmd_ensemble(cfg: RunConfig) -> int:
    ens, saved = run_ensemble(cfg)
    path = ensemble_path(cfg.out_dir, cfg.name)
    write_ensemble(path, cfg, ens)
    print(f"wrote {path}")
    for res in saved:
        tpath = trajectory_path(cfg.out_dir, cfg.name, res.index)
        write_trajectory(tpath, cfg, res)
        print(f"wrote {tpath}")
    if ens.failed_indices:
        print(json.dumps({"error": "trajectory_failures",
                          "failed_indices": ens.failed_indices}), file=sys.stderr)
        return 3
    return 0


def _cmd_reference(cfg: RunConfig) -> int:
    from .engine import initial_density

    stride_dt = cfg.effective_stride() * cfg.dt
    n_samples = int(np.ceil(cfg.duration / cfg.dt - 1e-12)) // cfg.effective_stride() + 1
    times = np.arange(n_samples) * stride_dt
    fid = lindblad_fidelity(cfg.model_config(), initial_density(cfg), times, cfg.dt)
    path = reference_path(cfg.out_dir, cfg.name)
    write_reference(path, cfg, times, fid)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            failures = run_validation()
            if failures:
                print(json.dumps({"error": "validation_failed", "failures": failures}),
                      file=sys.stderr)
                return 1
            return 0
        cfg = resolve_config(args)
        if args.command == "run":
            return _cmd_run(cfg, args.index)
        if args.command == "ensemble":
            return _cmd_ensemble(cfg)
        if args.command == "reference":
            return _cmd_reference(cfg)
        raise ValueError(f"unhandled command {args.command}")
    except (ConfigurationError, FileNotFoundError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
