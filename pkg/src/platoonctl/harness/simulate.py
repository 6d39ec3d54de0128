"""Closed-loop simulation: artifacts preparation, the step loop, persistence."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from ..control import (
    ControllerConfig,
    DeepcController,
    MpcController,
    RdeepLccController,
)
from ..datasets import (
    build_hankel_set,
    build_sequences,
    collect_excitation,
    check_persistent_excitation,
)
from ..learning import (
    NoiseSpec,
    build_noise_matrix_zonotope,
    build_system_matrix_set,
    dataset_hash,
    solve_feedback_gain_auto,
)
from ..platoon import (
    PlantState,
    build_discrete_model,
    equilibrium_spacing,
    error_state,
    plant_step,
    vehicle_accelerations,
)
from .config import AppConfig
from .cycles import load_named_cycle, resample
from .metrics import compute_metrics

# independent random substreams per run seed
_STREAM_ATTACK, _STREAM_PLANT, _STREAM_MEAS = 23, 19, 29

TRACE_DIAG_COLUMNS = ("qp_status", "fallback", "sigma_norm", "qp_iterations")


@dataclass
class Artifacts:
    """Everything the online phase needs, learned once per (dataset, bounds)."""

    model: object
    hankels: object
    mset: object
    gain: object
    spec: NoiseSpec
    gain_phi_omega: float
    provenance: dict = field(default_factory=dict)


def prepare_artifacts(cfg: AppConfig) -> Artifacts:
    """Collect both recipes, identify the model family, synthesize the gain."""
    model = build_discrete_model(
        cfg.platoon.n, cfg.platoon.hdv, cfg.platoon.v_star, cfg.platoon.dt
    )
    col = cfg.collection
    general = collect_excitation(
        model, col.T, ranges=col.ranges, noise_bound=cfg.noise.omega_max,
        seed=col.seed, plant=col.plant, hold=col.hold,
        t_ini=cfg.controller.t_ini, horizon=cfg.controller.n_horizon,
    )
    views = build_sequences(general)
    report = check_persistent_excitation(views)
    if not report.ok_identification:
        raise RuntimeError("general excitation run is rank deficient; change the seed")
    hankels = build_hankel_set(views, cfg.controller.t_ini, cfg.controller.n_horizon)
    m_omega = build_noise_matrix_zonotope(cfg.noise, views.T, cfg.platoon.n)
    mset = build_system_matrix_set(views, m_omega)

    gain_run = collect_excitation(
        model, col.T, ranges={"u": col.gain_u_amp, "e": 0.0, "f": 0.0},
        noise_bound=cfg.noise.omega_max, seed=col.gain_seed, plant=col.plant,
        cav_mode=col.gain_cav_mode,
        t_ini=cfg.controller.t_ini, horizon=cfg.controller.n_horizon,
    )
    gain, phi_omega = solve_feedback_gain_auto(
        build_sequences(gain_run), cfg.noise, mset=mset
    )
    return Artifacts(
        model=model, hankels=hankels, mset=mset, gain=gain, spec=cfg.noise,
        gain_phi_omega=phi_omega,
        provenance={
            "general_dataset": dataset_hash(general),
            "gain_dataset": dataset_hash(gain_run),
        },
    )


def build_controller(kind: str, cfg: AppConfig, artifacts: Artifacts):
    if kind == "all-hdv":
        return None
    if kind == "mpc":
        return MpcController(artifacts.model, cfg.controller)
    if kind == "deepc":
        return DeepcController(artifacts.hankels, cfg.controller, artifacts.model.dim)
    if kind == "rdeep-lcc":
        # online the head vehicle is taken as the moving equilibrium, so the
        # realized disturbance channel is identically zero in the error system
        online_spec = NoiseSpec(0.0, cfg.noise.theta_max, cfg.noise.omega_max)
        return RdeepLccController(
            artifacts.hankels, artifacts.mset, artifacts.gain, online_spec, cfg.controller
        )
    raise ValueError(f"unknown controller kind {kind!r}")


@dataclass
class SimResult:
    trace: dict
    metrics: dict
    events: list
    timing: dict
    window: tuple

    def trace_length(self) -> int:
        return int(self.trace["t"].shape[0])


class ClosedLoopRunner:
    """One closed-loop experiment, advanced one step at a time.

    The human-in-the-loop service interleaves network traffic between steps;
    run_closed_loop just drives it straight through.  Acceleration overrides
    (vehicle index -> commanded acceleration) replace car-following for
    human-driven vehicles at that step.
    """

    def __init__(self, cfg: AppConfig, artifacts: Artifacts,
                 controller_kind: str | None = None, seed: int | None = None):
        self.cfg = cfg
        self.model = artifacts.model
        self.kind = controller_kind or cfg.controller_kind
        run_seed = cfg.scenario.seed if seed is None else seed
        n, dt = self.model.n, self.model.dt
        self.steps = int(round(cfg.scenario.duration / dt))

        t_cycle, v_cycle = load_named_cycle(cfg.scenario.cycle)
        profile = resample(t_cycle, v_cycle, dt, cfg.scenario.duration)
        v_max_floor = min(p.v_max for p in cfg.platoon.hdv) - 1e-6
        self.profile = np.clip(profile, 1e-6, v_max_floor)

        self.controller = build_controller(self.kind, cfg, artifacts)
        self.warmup = cfg.controller.t_ini
        self.controlled = self.kind != "all-hdv"

        self._rng_attack = np.random.default_rng([run_seed, _STREAM_ATTACK])
        self._rng_plant = np.random.default_rng([run_seed, _STREAM_PLANT])
        self._rng_meas = np.random.default_rng([run_seed, _STREAM_MEAS])

        self.state = equilibrium_state_at(self.model, cfg, self.profile[0])
        # raw history for re-anchoring the past window in the current frame
        self._history = []  # (spacings, velocities incl. head, u_sent, theta)
        self.trace = {
            "t": np.empty(self.steps), "v_star": np.empty(self.steps),
            "u_sent": np.zeros(self.steps), "theta": np.zeros(self.steps),
            "u_received": np.zeros(self.steps),
            "sigma_norm": np.zeros(self.steps),
            "qp_iterations": np.zeros(self.steps, dtype=int),
            "fallback": np.zeros(self.steps, dtype=int),
            "qp_status": np.empty(self.steps, dtype=object),
        }
        for i in range(1, n + 1):
            for c in ("s", "v", "a"):
                self.trace[f"{c}{i}"] = np.empty(self.steps)
        self.events = []
        self.solve_ms = []
        self.k = 0
        self.halted = False

    @property
    def done(self) -> bool:
        return self.halted or self.k >= self.steps

    def step(self, overrides: dict | None = None) -> dict:
        """Advance one tick; returns a state frame for streaming."""
        cfg, model, k, n = self.cfg, self.model, self.k, self.model.n
        if self.done:
            raise RuntimeError("run already finished")
        v_star = float(self.profile[k])
        s_star = np.array([equilibrium_spacing(p, v_star) for p in cfg.platoon.hdv])
        x_true = error_state(self.state, s_star, v_star)
        meas_noise = cfg.measurement_noise_bound * self._rng_meas.uniform(-1.0, 1.0, 2 * n)
        x_meas = x_true + meas_noise

        if self.controlled and k >= self.warmup and len(self._history) >= self.warmup:
            if hasattr(self.controller, "set_window"):
                self._anchor_window(v_star, s_star)
            t0 = time.perf_counter()
            res = self.controller.step(x_meas)
            self.solve_ms.append(1e3 * (time.perf_counter() - t0))
            u_sent = res.u_applied
            diag = res.diagnostics
        else:
            u_sent = 0.0
            diag = {"qp_status": "warmup" if self.controlled else "n/a",
                    "fallback_used": False, "sigma_norm": 0.0, "qp_iterations": 0}

        theta_draw = self._rng_attack.uniform(-1.0, 1.0) * cfg.noise.theta_max
        theta = theta_draw if self.controlled else 0.0
        u_received = u_sent + theta if self.controlled else 0.0

        accels = vehicle_accelerations(
            model, self.state, u_received if self.controlled else None
        )
        if overrides:
            for vid, acc in overrides.items():
                accels[vid - 1] = acc

        trace = self.trace
        spacings = self.state.spacings()
        trace["t"][k] = k * model.dt
        trace["v_star"][k] = v_star
        trace["u_sent"][k] = u_sent
        trace["theta"][k] = theta
        trace["u_received"][k] = u_received
        trace["sigma_norm"][k] = diag.get("sigma_norm", 0.0)
        trace["qp_iterations"][k] = diag.get("qp_iterations", 0)
        trace["fallback"][k] = int(diag.get("fallback_used", False))
        trace["qp_status"][k] = diag.get("qp_status", "n/a")
        for i in range(n):
            trace[f"s{i + 1}"][k] = spacings[i]
            trace[f"v{i + 1}"][k] = self.state.velocities[i + 1]
            trace[f"a{i + 1}"][k] = accels[i]

        if np.any(spacings <= 0.0):
            self.events.append({"step": k, "kind": "collision",
                                "detail": f"spacing {spacings.min():.3f} m"})
            if cfg.scenario.halt_on_collision:
                for key, arr in trace.items():
                    trace[key] = arr[: k + 1]
                self.halted = True
        if diag.get("fallback_used"):
            self.events.append({"step": k, "kind": "fallback",
                                "detail": diag.get("qp_status")})

        if self.controlled:
            self._history.append((
                self.state.spacings().copy() + meas_noise[0::2],
                self.state.velocities.copy()
                + np.concatenate([[0.0], meas_noise[1::2]]),
                u_sent, theta,
            ))
            if len(self._history) > self.warmup:
                self._history.pop(0)
        self.state = plant_step(
            model, self.state,
            u_sent if self.controlled else None,
            theta, cfg.noise.omega_max,
            float(self.profile[k + 1]) if k + 1 < len(self.profile) else float(self.profile[-1]),
            self._rng_plant,
            overrides=overrides,
        )
        self.k += 1

        return {
            "type": "state",
            "t": round(k * model.dt, 9),
            "tick": k,
            "vehicles": self._vehicle_frames(accels),
            "cav": {"u_sent": u_sent, "u_received": u_received},
        }

    def _anchor_window(self, v_star: float, s_star: np.ndarray) -> None:
        """Re-express the raw past window around the current equilibrium.

        Past states recorded while the head vehicle ran at other speeds stay
        consistent trajectories of the current error system when shifted into
        today's frame, with the head deviation carried on the disturbance
        channel; without this, every equilibrium ramp looks like an
        inexplicable state jump and the slack absorbs the plan.
        """
        t_ini = self.warmup
        dim = self.model.dim
        x_win = np.empty((t_ini, dim))
        u_win = np.empty(t_ini)
        e_win = np.empty(t_ini)
        f_win = np.empty(t_ini)
        for j, (spacings, velocities, u, theta) in enumerate(self._history[-t_ini:]):
            x_win[j, 0::2] = spacings - s_star
            x_win[j, 1::2] = velocities[1:] - v_star
            u_win[j] = u
            e_win[j] = velocities[0] - v_star
            f_win[j] = theta
        self.controller.set_window(x_win, u_win, e_win, f_win)

    def _vehicle_frames(self, accels) -> list:
        frames = [{
            "id": 0, "role": "head",
            "pos": float(self.state.positions[0]),
            "vel": float(self.state.velocities[0]),
            "spacing": 0.0,
        }]
        spacings = self.state.spacings()
        for i in range(1, self.model.n + 1):
            role = "cav" if i == 1 else "hdv"
            if i in self.cfg.hil.human_vehicles:
                role = "human"
            frames.append({
                "id": i, "role": role,
                "pos": float(self.state.positions[i]),
                "vel": float(self.state.velocities[i]),
                "spacing": float(spacings[i - 1]),
            })
        return frames

    def finish(self) -> SimResult:
        steps_done = self.trace["t"].shape[0]
        t0_metric = min(self.warmup, steps_done - 1)
        met = compute_metrics(self.trace, self.cfg, t0_metric, steps_done)
        timing = {}
        if self.solve_ms:
            arr = np.array(self.solve_ms)
            timing = {
                "solve_ms_mean": float(arr.mean()),
                "solve_ms_p99": float(np.percentile(arr, 99)),
                "solve_ms_max": float(arr.max()),
            }
        return SimResult(trace=self.trace, metrics=met, events=self.events,
                         timing=timing, window=(t0_metric, steps_done))


def run_closed_loop(cfg: AppConfig, artifacts: Artifacts,
                    controller_kind: str | None = None,
                    seed: int | None = None,
                    pedal_feed=None) -> SimResult:
    """Drive the platoon through the configured cycle under one controller.

    pedal_feed, when given, maps (step, vehicle_id) -> commanded acceleration
    for human-driven vehicles (used by the replay path); vehicles without an
    entry fall back to car-following.
    """
    runner = ClosedLoopRunner(cfg, artifacts, controller_kind, seed)
    while not runner.done:
        overrides = None
        if pedal_feed is not None:
            overrides = {}
            for vid in cfg.hil.human_vehicles:
                acc = pedal_feed(runner.k, vid)
                if acc is not None:
                    overrides[vid] = acc
        runner.step(overrides)
    return runner.finish()


def equilibrium_state_at(model, cfg: AppConfig, v0: float) -> PlantState:
    """Equilibrium plant state at the cycle's initial velocity."""
    s_star = [equilibrium_spacing(p, float(v0)) for p in cfg.platoon.hdv]
    pos = np.empty(model.n + 1)
    pos[0] = 0.0
    for i in range(model.n):
        pos[i + 1] = pos[i] - s_star[i]
    vel = np.full(model.n + 1, float(v0))
    return PlantState(positions=pos, velocities=vel, time=0.0)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def trace_columns(n: int) -> list:
    cols = ["t", "v_star"]
    for i in range(1, n + 1):
        cols += [f"s{i}", f"v{i}", f"a{i}"]
    cols += ["u_sent", "theta", "u_received", "qp_status", "fallback",
             "sigma_norm", "qp_iterations"]
    return cols


def save_trace(result: SimResult, cfg: AppConfig, path) -> None:
    cols = trace_columns(cfg.platoon.n)
    steps = result.trace_length()
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(steps):
            cells = []
            for c in cols:
                val = result.trace[c][k]
                if c == "qp_status":
                    cells.append(str(val))
                elif c in ("fallback", "qp_iterations"):
                    cells.append(str(int(val)))
                else:
                    cells.append(repr(float(val)))
            fh.write(",".join(cells) + "\n")


def load_trace(path, n: int) -> dict:
    cols = trace_columns(n)
    data = {c: [] for c in cols}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != cols:
            raise ValueError(f"trace header mismatch: {header}")
        for line in fh:
            cells = line.rstrip("\n").split(",")
            for c, cell in zip(cols, cells):
                if c == "qp_status":
                    data[c].append(cell)
                elif c in ("fallback", "qp_iterations"):
                    data[c].append(int(cell))
                else:
                    data[c].append(float(cell))
    out = {}
    for c in cols:
        if c == "qp_status":
            out[c] = np.array(data[c], dtype=object)
        elif c in ("fallback", "qp_iterations"):
            out[c] = np.array(data[c], dtype=int)
        else:
            out[c] = np.array(data[c], dtype=float)
    return out


def save_metrics(result: SimResult, path) -> None:
    doc = {
        "metrics": result.metrics,
        "events": result.events,
        "timing": result.timing,
        "window": list(result.window),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
