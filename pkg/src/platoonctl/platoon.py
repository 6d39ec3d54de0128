"""Ground-truth mixed-platoon models.

Vehicle 1 is the directly controlled vehicle, vehicles 2..n are car-following
vehicles, and an uncontrolled head vehicle (index 0) drives the scenario.
The linearized error-state matrices feed analysis and the known-model MPC
baseline; the nonlinear optimal-velocity plant does all closed-loop state
updates.  State ordering is fixed: x = [s1~, v1~, ..., sn~, vn~].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HdvParams:
    """Car-following parameters: sensitivity gains and spacing profile."""

    alpha: float  # spacing-policy gain (1/s)
    beta: float   # relative-velocity gain (1/s)
    v_max: float  # maximum velocity (m/s)
    s_min: float  # minimum spacing (m)
    s_max: float  # maximum spacing (m)

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if not (0 < self.s_min < self.s_max):
            raise ValueError("spacing bounds must satisfy 0 < s_min < s_max")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")


DEFAULT_HDV = HdvParams(alpha=0.6, beta=0.9, v_max=36.0, s_min=5.0, s_max=35.0)


def desired_velocity(params: HdvParams, s: float) -> float:
    """Spacing-dependent desired velocity, saturated outside [s_min, s_max]."""
    if s <= params.s_min:
        return 0.0
    if s >= params.s_max:
        return params.v_max
    z = (s - params.s_min) / (params.s_max - params.s_min)
    return 0.5 * params.v_max * (1.0 - math.cos(math.pi * z))


def equilibrium_spacing(params: HdvParams, v_star: float) -> float:
    """Spacing at which the desired velocity equals v_star (inverse of the profile)."""
    if not (0.0 < v_star < params.v_max):
        raise ValueError(f"v_star={v_star} outside (0, {params.v_max})")
    return params.s_min + (params.s_max - params.s_min) / math.pi * math.acos(
        1.0 - 2.0 * v_star / params.v_max
    )


def ovm_acceleration(params: HdvParams, s: float, v: float, v_prev: float) -> float:
    """alpha * (V(s) - v) + beta * (v_prev - v)."""
    return params.alpha * (desired_velocity(params, s) - v) + params.beta * (v_prev - v)


def linearize_hdv(params: HdvParams, v_star: float) -> tuple:
    """Coefficients (g1, g2, g3) of the error dynamics around equilibrium.

    g1 = alpha * V'(s*), g2 = alpha + beta, g3 = beta; the diagonal block of
    the platoon matrix carries -g2.
    """
    s_star = equilibrium_spacing(params, v_star)
    span = params.s_max - params.s_min
    vprime = params.v_max * math.pi / (2.0 * span) * math.sin(
        math.pi * (s_star - params.s_min) / span
    )
    return params.alpha * vprime, params.alpha + params.beta, params.beta


@dataclass(frozen=True)
class PlatoonModel:
    """Discrete error-state model and the per-vehicle parameters behind it."""

    n: int
    hdv: tuple            # HdvParams per vehicle 1..n (entry 0 is the controlled slot)
    dt: float
    A: np.ndarray         # (2n, 2n)
    B: np.ndarray         # (2n, 1)
    H: np.ndarray         # (2n, 1)
    J: np.ndarray         # (2n, 1)
    gamma: np.ndarray     # (n-1, 3) linearized coefficients of vehicles 2..n
    v_star: float
    s_star: np.ndarray    # (n,) equilibrium spacing per vehicle

    @property
    def dim(self) -> int:
        return 2 * self.n

    def truth(self) -> np.ndarray:
        """Stacked [A B H J], the target of the identification stage."""
        return np.hstack([self.A, self.B, self.H, self.J])


def build_discrete_model(n: int, hdv, v_star: float, dt: float) -> PlatoonModel:
    """Assemble the forward-Euler discrete model around (s*, v*).

    hdv may be a single HdvParams (shared by every vehicle) or a sequence of
    length n ordered from the controlled vehicle backwards.
    """
    if n < 1:
        raise ValueError("need at least one vehicle")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if isinstance(hdv, HdvParams):
        hdv = (hdv,) * n
    hdv = tuple(hdv)
    if len(hdv) != n:
        raise ValueError(f"expected {n} parameter sets, got {len(hdv)}")

    d = 2 * n
    a_con = np.zeros((d, d))
    a_con[0, 1] = -1.0
    gammas = []
    for i in range(1, n):  # vehicles 2..n
        g1, g2, g3 = linearize_hdv(hdv[i], v_star)
        gammas.append((g1, g2, g3))
        r = 2 * i
        a_con[r, r + 1] = -1.0
        a_con[r + 1, r] = g1
        a_con[r + 1, r + 1] = -g2
        a_con[r, r - 1] = 1.0
        a_con[r + 1, r - 1] = g3
    b_con = np.zeros((d, 1))
    b_con[1, 0] = 1.0
    h_con = np.zeros((d, 1))
    h_con[0, 0] = 1.0
    j_con = np.zeros((d, 1))
    j_con[1, 0] = 1.0

    s_star = np.array([equilibrium_spacing(p, v_star) for p in hdv])
    return PlatoonModel(
        n=n,
        hdv=hdv,
        dt=dt,
        A=np.eye(d) + dt * a_con,
        B=dt * b_con,
        H=dt * h_con,
        J=dt * j_con,
        gamma=np.array(gammas).reshape(-1, 3),
        v_star=v_star,
        s_star=s_star,
    )


@dataclass(frozen=True)
class PlantState:
    """Simulator coordinates: absolute positions/velocities, head vehicle first."""

    positions: np.ndarray   # (n+1,), strictly decreasing in index
    velocities: np.ndarray  # (n+1,), >= 0
    time: float = 0.0

    def spacings(self) -> np.ndarray:
        """Bumper-to-bumper gaps s_i = p_{i-1} - p_i for vehicles 1..n."""
        return self.positions[:-1] - self.positions[1:]


def equilibrium_state(model: PlatoonModel, head_position: float = 0.0) -> PlantState:
    pos = np.empty(model.n + 1)
    pos[0] = head_position
    for i in range(model.n):
        pos[i + 1] = pos[i] - model.s_star[i]
    vel = np.full(model.n + 1, model.v_star)
    return PlantState(positions=pos, velocities=vel, time=0.0)


def error_state(state: PlantState, s_star, v_star: float) -> np.ndarray:
    """Error coordinates [s_i - s*_i, v_i - v*] for vehicles 1..n."""
    s_star = np.asarray(s_star, dtype=float)
    x = np.empty(2 * s_star.shape[0])
    x[0::2] = state.spacings() - s_star
    x[1::2] = state.velocities[1:] - v_star
    return x


def vehicle_accelerations(model: PlatoonModel, state: PlantState, u_cav) -> np.ndarray:
    """Commanded accelerations of vehicles 1..n given the current state.

    u_cav is the acceleration received by vehicle 1; pass None to let it
    car-follow like the rest (all-HDV mode).
    """
    s = state.spacings()
    v = state.velocities
    acc = np.empty(model.n)
    if u_cav is None:
        acc[0] = ovm_acceleration(model.hdv[0], s[0], v[1], v[0])
    else:
        acc[0] = u_cav
    for i in range(1, model.n):
        acc[i] = ovm_acceleration(model.hdv[i], s[i], v[i + 1], v[i])
    return acc


def plant_step(
    model: PlatoonModel,
    state: PlantState,
    u_cav,
    attack: float,
    noise_bound: float,
    head_velocity: float,
    rng: np.random.Generator,
    overrides: dict | None = None,
) -> PlantState:
    """Advance the nonlinear plant by one forward-Euler step.

    The head vehicle tracks the prescribed velocity, vehicle 1 applies
    u_cav + attack (or car-follows when u_cav is None), the rest car-follow.
    overrides maps vehicle indices (1..n) to commanded accelerations that
    replace the car-following law (human-driven vehicles).  Additive state
    noise, uniform in [-noise_bound, noise_bound], perturbs each vehicle's
    spacing and velocity after integration; velocities are clamped at zero.
    The noise draw happens regardless of the bound so the realization is
    seed-stable across bound changes.
    """
    dt = model.dt
    acc = vehicle_accelerations(model, state, None if u_cav is None else u_cav + attack)
    if overrides:
        for vid, a in overrides.items():
            acc[vid - 1] = a
    pos = state.positions + state.velocities * dt
    vel = state.velocities.copy()
    vel[0] = head_velocity
    vel[1:] += acc * dt

    noise = noise_bound * rng.uniform(-1.0, 1.0, size=2 * model.n)
    # spacing noise s_i += d_i realized as a cumulative position shift
    pos[1:] -= np.cumsum(noise[0::2])
    vel[1:] += noise[1::2]
    np.maximum(vel, 0.0, out=vel)
    return PlantState(positions=pos, velocities=vel, time=state.time + dt)
