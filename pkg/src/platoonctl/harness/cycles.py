"""Head-vehicle velocity profiles: file loading and the bundled desk cycle."""

from __future__ import annotations

import importlib.resources

import numpy as np


class CycleFormatError(ValueError):
    pass


def load_cycle(path) -> tuple:
    """Parse a `t_seconds,velocity_mps` CSV into (t, v) arrays.

    Header row required; timestamps must increase strictly and velocities be
    nonnegative.  Errors carry the offending line number.
    """
    ts, vs = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != "t_seconds,velocity_mps":
            raise CycleFormatError(f"line 1: expected header 't_seconds,velocity_mps', got {header!r}")
        for lineno, raw in enumerate(fh, start=2):
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split(",")
            if len(parts) != 2:
                raise CycleFormatError(f"line {lineno}: expected two columns")
            try:
                t, v = float(parts[0]), float(parts[1])
            except ValueError as err:
                raise CycleFormatError(f"line {lineno}: {err}") from None
            if ts and t <= ts[-1]:
                raise CycleFormatError(f"line {lineno}: timestamps must increase strictly")
            if v < 0:
                raise CycleFormatError(f"line {lineno}: negative velocity")
            ts.append(t)
            vs.append(v)
    if not ts:
        raise CycleFormatError("line 2: cycle file has no data rows")
    return np.array(ts), np.array(vs)


def desk_cycle_path():
    """Bundled 120 s synthetic accel/cruise/brake cycle."""
    return importlib.resources.files("platoonctl").joinpath("data/desk_cycle.csv")


def load_named_cycle(name_or_path) -> tuple:
    if name_or_path == "desk":
        with importlib.resources.as_file(desk_cycle_path()) as p:
            return load_cycle(p)
    return load_cycle(name_or_path)


def resample(t: np.ndarray, v: np.ndarray, dt: float, duration: float) -> np.ndarray:
    """Linear interpolation onto the dt grid, holding the last value."""
    steps = int(round(duration / dt))
    grid = np.arange(steps + 1) * dt
    return np.interp(grid, t, v)


def export_cycle(t, v, path) -> None:
    with open(path, "w") as fh:
        fh.write("t_seconds,velocity_mps\n")
        for ti, vi in zip(t, v):
            fh.write(f"{float(ti)!r},{float(vi)!r}\n")
