"""Performance metrics over a closed-loop trace.

All four indices are pure functions of the trace arrays and the config, so
recomputing them from a persisted trace reproduces the stored values bit for
bit.  The metric window [t0, tf) excludes the controller warm-up.
"""

from __future__ import annotations

import numpy as np

from ..platoon import equilibrium_spacing
from .config import AppConfig, FuelCoefficients


def fuel_rate(v: float, a: float, coeffs: FuelCoefficients) -> float:
    """Instantaneous fuel rate (mL/s) of one vehicle.

    Tractive-demand form: R_t = rt0 + rt_v2 v^2 + rt_a a; above zero demand
    the rate is idle + tractive*R_t*v (+ accel*a^2*v when accelerating),
    otherwise the engine idles.
    """
    r_t = coeffs.rt0 + coeffs.rt_v2 * v * v + coeffs.rt_a * a
    if r_t <= 0.0:
        return coeffs.idle
    rate = coeffs.idle + coeffs.tractive * r_t * v
    if a > 0.0:
        rate += coeffs.accel * a * a * v
    return rate


def error_states_from_trace(trace: dict, cfg: AppConfig) -> np.ndarray:
    """Rebuild x(k) = [s_i - s*_i(v*(k)), v_i - v*(k)] from trace columns."""
    n = cfg.platoon.n
    steps = trace["t"].shape[0]
    x = np.empty((steps, 2 * n))
    v_star = trace["v_star"]
    for i in range(n):
        params = cfg.platoon.hdv[i]
        s_star = np.array([equilibrium_spacing(params, v) for v in v_star])
        x[:, 2 * i] = trace[f"s{i + 1}"] - s_star
        x[:, 2 * i + 1] = trace[f"v{i + 1}"] - v_star
    return x


def compute_metrics(trace: dict, cfg: AppConfig, t0: int, tf: int) -> dict:
    """R_v, R_c, R_f, R_a over steps k in [t0, tf)."""
    if not (0 <= t0 < tf <= trace["t"].shape[0]):
        raise ValueError(f"bad metric window [{t0}, {tf})")
    n = cfg.platoon.n
    window = slice(t0, tf)
    count = tf - t0
    v_star = trace["v_star"][window]

    r_v = 0.0
    for i in range(n):
        r_v += float(np.sum(np.abs(trace[f"v{i + 1}"][window] - v_star)))
    r_v /= count * n

    x = error_states_from_trace(trace, cfg)[window]
    q_diag = cfg.controller.state_weight(n)
    u = trace["u_sent"][window]
    r_c = float(np.sum((x * x) @ q_diag) + cfg.controller.r_input * np.sum(u * u))

    r_f = 0.0
    for i in range(n):
        vi = trace[f"v{i + 1}"][window]
        ai = trace[f"a{i + 1}"][window]
        r_f += sum(fuel_rate(float(v), float(a), cfg.fuel) for v, a in zip(vi, ai))
    r_f *= cfg.platoon.dt

    r_a = 0.0
    for i in range(n):
        ai = trace[f"a{i + 1}"][window]
        r_a += float(np.sum(ai * ai))
    r_a /= count * n

    return {"r_v": r_v, "r_c": r_c, "r_f": r_f, "r_a": r_a}
