"""Config file schema: one JSON document, unknown keys rejected."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..control import ControllerConfig
from ..learning import NoiseSpec
from ..platoon import HdvParams

CONTROLLER_KINDS = ("rdeep-lcc", "deepc", "mpc", "all-hdv")


class ConfigError(ValueError):
    pass


def _take(doc: dict, section: str, allowed: set) -> dict:
    sub = doc.get(section, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(sub) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return sub


@dataclass(frozen=True)
class PlatoonSpec:
    n: int = 3
    dt: float = 0.05
    v_star: float = 18.0
    hdv: tuple = ()  # HdvParams per vehicle, filled by parse


@dataclass(frozen=True)
class CollectionSpec:
    T: int = 600
    seed: int = 1000
    plant: str = "nonlinear"
    hold: int = 1
    ranges: dict = field(default_factory=lambda: {"u": 0.2, "e": 0.5, "f": 0.3})
    gain_seed: int = 2000
    gain_u_amp: float = 0.2
    gain_cav_mode: str = "stock"


@dataclass(frozen=True)
class ScenarioSpec:
    cycle: str = "desk"
    duration: float = 120.0
    seed: int = 0
    halt_on_collision: bool = False


@dataclass(frozen=True)
class FuelCoefficients:
    idle: float = 0.444           # mL/s at idle / negative tractive demand
    tractive: float = 0.090       # mL per kJ-ish tractive term scale
    accel: float = 0.054          # extra term on positive acceleration
    rt0: float = 0.333
    rt_v2: float = 0.00108
    rt_a: float = 1.2


@dataclass(frozen=True)
class HilSpec:
    human_vehicles: tuple = ()
    a_max: float = 5.0
    b_max: float = 8.0
    tick_hz: float = 20.0
    human_params: dict = field(default_factory=dict)  # vehicle index -> HdvParams


@dataclass(frozen=True)
class AppConfig:
    platoon: PlatoonSpec
    noise: NoiseSpec
    measurement_noise_bound: float
    controller_kind: str
    controller: ControllerConfig
    collection: CollectionSpec
    scenario: ScenarioSpec
    fuel: FuelCoefficients
    hil: HilSpec


def _parse_hdv(entry) -> HdvParams:
    allowed = {"alpha", "beta", "v_max", "s_min", "s_max"}
    unknown = set(entry) - allowed
    if unknown:
        raise ConfigError(f"unknown HDV parameter keys: {sorted(unknown)}")
    return HdvParams(**entry)


def parse_config(doc: dict) -> AppConfig:
    top_allowed = {"platoon", "noise", "controller", "collection", "scenario", "fuel", "hil"}
    unknown = set(doc) - top_allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    p = _take(doc, "platoon", {"n", "dt", "v_star", "hdv"})
    n = int(p.get("n", 3))
    hdv_doc = p.get("hdv", {"alpha": 0.6, "beta": 0.9, "v_max": 36.0, "s_min": 5.0, "s_max": 35.0})
    if isinstance(hdv_doc, dict):
        hdv = (_parse_hdv(hdv_doc),) * n
    else:
        hdv = tuple(_parse_hdv(e) for e in hdv_doc)
        if len(hdv) != n:
            raise ConfigError(f"hdv list length {len(hdv)} does not match n={n}")
    platoon = PlatoonSpec(n=n, dt=float(p.get("dt", 0.05)),
                          v_star=float(p.get("v_star", 18.0)), hdv=hdv)

    nz = _take(doc, "noise", {"epsilon_max", "theta_max", "omega_max", "measurement_noise_bound"})
    noise = NoiseSpec(
        epsilon_max=float(nz.get("epsilon_max", 0.5)),
        theta_max=float(nz.get("theta_max", 2.0)),
        omega_max=float(nz.get("omega_max", 0.02)),
    )
    meas = float(nz.get("measurement_noise_bound", 0.0))

    c = _take(doc, "controller", {
        "kind", "t_ini", "n_horizon", "weights", "lambdas", "x_max", "u_max",
        "reduction_budget", "r0_mode", "tube_depth", "qp_tol", "qp_max_iter",
    })
    kind = c.get("kind", "rdeep-lcc")
    if kind not in CONTROLLER_KINDS:
        raise ConfigError(f"unknown controller kind {kind!r}; pick one of {CONTROLLER_KINDS}")
    weights = c.get("weights", {})
    unknown = set(weights) - {"rho_s", "rho_v", "xi", "r_input"}
    if unknown:
        raise ConfigError(f"unknown weight keys: {sorted(unknown)}")
    lambdas = c.get("lambdas", {})
    unknown = set(lambdas) - {"lambda_g", "lambda_sigma"}
    if unknown:
        raise ConfigError(f"unknown lambda keys: {sorted(unknown)}")
    default_horizon = 5 if kind == "rdeep-lcc" else 10
    controller = ControllerConfig(
        t_ini=int(c.get("t_ini", 20)),
        n_horizon=int(c.get("n_horizon", default_horizon)),
        rho_s=float(weights.get("rho_s", 0.5)),
        rho_v=float(weights.get("rho_v", 1.0)),
        xi=float(weights.get("xi", 0.6)),
        r_input=float(weights.get("r_input", 0.1)),
        lambda_g=float(lambdas.get("lambda_g", 10.0)),
        lambda_sigma=float(lambdas.get("lambda_sigma", 10.0)),
        x_max=tuple(c.get("x_max", (7.0, 7.0))),
        u_max=float(c.get("u_max", 5.0)),
        reduction_budget=int(c.get("reduction_budget", 20)),
        r0_mode=c.get("r0_mode", "point"),
        tube_depth=c.get("tube_depth", 2),
        qp_tol=float(c.get("qp_tol", 1e-6)),
        qp_max_iter=int(c.get("qp_max_iter", 2000)),
    )

    col = _take(doc, "collection", {
        "T", "seed", "plant", "hold", "ranges", "gain_seed", "gain_u_amp", "gain_cav_mode",
    })
    ranges = col.get("ranges", {"u": 0.2, "e": 0.5, "f": 0.3})
    unknown = set(ranges) - {"u", "e", "f"}
    if unknown:
        raise ConfigError(f"unknown range keys: {sorted(unknown)}")
    collection = CollectionSpec(
        T=int(col.get("T", 600)),
        seed=int(col.get("seed", 1000)),
        plant=col.get("plant", "nonlinear"),
        hold=int(col.get("hold", 1)),
        ranges={k: float(v) for k, v in ranges.items()},
        gain_seed=int(col.get("gain_seed", 2000)),
        gain_u_amp=float(col.get("gain_u_amp", 0.2)),
        gain_cav_mode=col.get("gain_cav_mode", "stock"),
    )

    s = _take(doc, "scenario", {"cycle", "duration", "seed", "halt_on_collision"})
    duration = float(s.get("duration", 120.0))
    if abs(duration / platoon.dt - round(duration / platoon.dt)) > 1e-9:
        raise ConfigError(f"duration {duration} not divisible by dt {platoon.dt}")
    scenario = ScenarioSpec(
        cycle=s.get("cycle", "desk"),
        duration=duration,
        seed=int(s.get("seed", 0)),
        halt_on_collision=bool(s.get("halt_on_collision", False)),
    )

    f = _take(doc, "fuel", {"idle", "tractive", "accel", "rt0", "rt_v2", "rt_a"})
    fuel = FuelCoefficients(**{k: float(v) for k, v in f.items()})

    h = _take(doc, "hil", {"human_vehicles", "a_max", "b_max", "tick_hz", "human_params"})
    human_params = {
        int(k): _parse_hdv(v) for k, v in h.get("human_params", {}).items()
    }
    hil = HilSpec(
        human_vehicles=tuple(int(v) for v in h.get("human_vehicles", ())),
        a_max=float(h.get("a_max", 5.0)),
        b_max=float(h.get("b_max", 8.0)),
        tick_hz=float(h.get("tick_hz", 20.0)),
        human_params=human_params,
    )
    for vid in hil.human_vehicles:
        if vid < 2 or vid > platoon.n:
            raise ConfigError(f"human vehicle {vid} out of range 2..{platoon.n}")

    return AppConfig(
        platoon=platoon, noise=noise, measurement_noise_bound=meas,
        controller_kind=kind, controller=controller, collection=collection,
        scenario=scenario, fuel=fuel, hil=hil,
    )


def load_config(path) -> AppConfig:
    with open(path) as fh:
        return parse_config(json.load(fh))


def default_config(doc: dict | None = None) -> AppConfig:
    return parse_config(dict(doc or {}))
