"""Parameter sweeps over noise/attack bounds, controllers, and seeds."""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import AppConfig
from .simulate import Artifacts, prepare_artifacts, run_closed_loop

SWEEP_COLUMNS = (
    "controller", "omega_max", "theta_max", "seed",
    "r_v", "r_c", "r_f", "r_a", "events",
)


def _with_bounds(cfg: AppConfig, omega: float, theta: float) -> AppConfig:
    noise = dataclasses.replace(cfg.noise, omega_max=omega, theta_max=theta)
    return dataclasses.replace(cfg, noise=noise)


def _run_cell_job(args):
    cfg, artifacts, controller, seed = args
    try:
        res = run_closed_loop(cfg, artifacts, controller_kind=controller, seed=seed)
        m = res.metrics
        return {
            "controller": controller,
            "omega_max": cfg.noise.omega_max,
            "theta_max": cfg.noise.theta_max,
            "seed": seed,
            "r_v": m["r_v"], "r_c": m["r_c"], "r_f": m["r_f"], "r_a": m["r_a"],
            "events": len(res.events),
        }
    except Exception as err:  # record, keep sweeping
        return {
            "controller": controller,
            "omega_max": cfg.noise.omega_max,
            "theta_max": cfg.noise.theta_max,
            "seed": seed,
            "r_v": float("nan"), "r_c": float("nan"),
            "r_f": float("nan"), "r_a": float("nan"),
            "events": -1,
            "error": f"{type(err).__name__}: {err}",
        }


def run_sweep(cfg: AppConfig, omega_set, theta_set, seeds, controllers,
              workers: int = 2, progress=None) -> list:
    """Grid of (omega, theta) cells; artifacts rebuilt per cell, runs fan out.

    Returns per-run rows (dicts with SWEEP_COLUMNS keys plus optional
    'error'); failures are recorded per run and do not stop the sweep.
    """
    rows = []
    for omega in omega_set:
        for theta in theta_set:
            cell_cfg = _with_bounds(cfg, float(omega), float(theta))
            try:
                artifacts = prepare_artifacts(cell_cfg)
            except Exception as err:
                for controller in controllers:
                    for seed in seeds:
                        rows.append({
                            "controller": controller, "omega_max": float(omega),
                            "theta_max": float(theta), "seed": int(seed),
                            "r_v": float("nan"), "r_c": float("nan"),
                            "r_f": float("nan"), "r_a": float("nan"),
                            "events": -1,
                            "error": f"artifacts: {type(err).__name__}: {err}",
                        })
                continue
            jobs = [
                (cell_cfg, artifacts, controller, int(seed))
                for controller in controllers for seed in seeds
            ]
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    cell_rows = list(pool.map(_run_cell_job, jobs))
            else:
                cell_rows = [_run_cell_job(j) for j in jobs]
            rows.extend(cell_rows)
            if progress is not None:
                progress(float(omega), float(theta), cell_rows)
    return rows


def save_sweep(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(SWEEP_COLUMNS) + ["error"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**{k: row.get(k, "") for k in SWEEP_COLUMNS},
                             "error": row.get("error", "")})


def summarize(rows) -> list:
    """Mean and standard deviation of each metric per (controller, omega, theta)."""
    groups = {}
    for row in rows:
        key = (row["controller"], row["omega_max"], row["theta_max"])
        groups.setdefault(key, []).append(row)
    out = []
    for (controller, omega, theta), members in sorted(groups.items()):
        entry = {"controller": controller, "omega_max": omega, "theta_max": theta,
                 "runs": len(members)}
        for metric in ("r_v", "r_c", "r_f", "r_a"):
            vals = np.array([m[metric] for m in members], dtype=float)
            ok = vals[np.isfinite(vals)]
            entry[f"{metric}_mean"] = float(ok.mean()) if ok.size else float("nan")
            entry[f"{metric}_std"] = float(ok.std()) if ok.size else float("nan")
        out.append(entry)
    return out


def save_summary(summary, path) -> None:
    if not summary:
        return
    fields = list(summary[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(summary)
