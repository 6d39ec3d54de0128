"""Command-line interface: collect, learn, simulate, sweep, hil-serve, report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..datasets import build_sequences, check_persistent_excitation, collect_excitation, save_dataset
from ..learning import save_artifacts
from ..platoon import build_discrete_model
from .config import AppConfig, default_config, load_config
from .simulate import prepare_artifacts, run_closed_loop, save_metrics, save_trace
from .sweep import run_sweep, save_summary, save_sweep, summarize

log = logging.getLogger("platoonctl")


def _load(args) -> AppConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg, scenario=dataclasses.replace(cfg.scenario, seed=args.seed)
        )
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_collect(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    model = build_discrete_model(cfg.platoon.n, cfg.platoon.hdv,
                                 cfg.platoon.v_star, cfg.platoon.dt)
    col = cfg.collection
    ds = collect_excitation(
        model, col.T, ranges=col.ranges, noise_bound=cfg.noise.omega_max,
        seed=args.seed if args.seed is not None else col.seed,
        plant=col.plant, hold=col.hold,
        t_ini=cfg.controller.t_ini, horizon=cfg.controller.n_horizon,
    )
    report = check_persistent_excitation(build_sequences(ds))
    path = out / "dataset.json"
    save_dataset(ds, path)
    log.info("dataset written to %s (rank %d/%d)", path,
             report.rank_full_stack, report.rows_full_stack)
    return 0 if report.ok_identification else 1


def cmd_learn(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    artifacts = prepare_artifacts(cfg)
    path = out / "artifacts.json"
    save_artifacts(path, artifacts.mset, artifacts.gain, artifacts.spec,
                   provenance={**artifacts.provenance,
                               "gain_phi_omega": artifacts.gain_phi_omega})
    log.info("artifacts written to %s (gain synthesized at omega=%g)",
             path, artifacts.gain_phi_omega)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    artifacts = prepare_artifacts(cfg)
    result = run_closed_loop(cfg, artifacts)
    save_trace(result, cfg, out / "trace.csv")
    save_metrics(result, out / "metrics.json")
    log.info("metrics: %s", json.dumps(result.metrics))
    if result.events:
        log.warning("%d events (first: %s)", len(result.events), result.events[0])
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    omega_set = [float(v) for v in args.omega_set.split(",")]
    theta_set = [float(v) for v in args.theta_set.split(",")]
    seeds = list(range(args.reps))
    controllers = args.controllers.split(",")

    def progress(omega, theta, rows):
        log.info("cell omega=%g theta=%g done (%d runs)", omega, theta, len(rows))

    rows = run_sweep(cfg, omega_set, theta_set, seeds, controllers,
                     workers=args.workers, progress=progress)
    save_sweep(rows, out / "sweep.csv")
    save_summary(summarize(rows), out / "sweep_summary.csv")
    log.info("sweep written to %s", out / "sweep.csv")
    return 0


def cmd_hil_serve(args) -> int:
    from .hil import serve

    cfg = _load(args)
    out = _outdir(args)
    host, _, port = args.listen.rpartition(":")
    return serve(cfg, host or "127.0.0.1", int(port), tick_hz=args.tick_hz,
                 out_dir=out)


def cmd_report(args) -> int:
    out = _outdir(args)
    path = Path(args.out or ".") / "sweep.csv"
    if not path.exists():
        log.error("no sweep.csv under %s", out)
        return 1
    import csv as _csv

    with open(path) as fh:
        rows = [dict(r) for r in _csv.DictReader(fh)]
    for row in rows:
        for k in ("omega_max", "theta_max", "r_v", "r_c", "r_f", "r_a"):
            row[k] = float(row[k]) if row[k] not in ("", "nan") else float("nan")
    summary = summarize(rows)
    save_summary(summary, out / "sweep_summary.csv")
    header = f"{'controller':12s} {'omega':>6s} {'theta':>6s} {'R_v':>8s} {'R_c':>12s} {'R_f':>8s} {'R_a':>8s}"
    print(header)
    for entry in summary:
        print(f"{entry['controller']:12s} {entry['omega_max']:6.3f} {entry['theta_max']:6.2f} "
              f"{entry['r_v_mean']:8.4f} {entry['r_c_mean']:12.1f} "
              f"{entry['r_f_mean']:8.1f} {entry['r_a_mean']:8.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="platoonctl",
        description="Mixed-platoon control workbench: offline learning, "
                    "closed-loop simulation, sweeps, and the HIL service.",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output directory", default=".")

    p = sub.add_parser("collect", help="generate an excitation dataset")
    common(p)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("learn", help="build offline artifacts (model set, gain)")
    common(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("simulate", help="run one closed-loop scenario")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid over noise/attack bounds")
    common(p)
    p.add_argument("--omega-set", default="0,0.01,0.02,0.03,0.04")
    p.add_argument("--theta-set", default="0,1,2,3,4")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--controllers", default="rdeep-lcc,deepc,mpc,all-hdv")
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("hil-serve", help="run the real-time human-in-the-loop service")
    common(p)
    p.add_argument("--listen", default="127.0.0.1:8765")
    p.add_argument("--tick-hz", type=float, default=20.0)
    p.set_defaults(func=cmd_hil_serve)

    p = sub.add_parser("report", help="tabulate sweep results")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
