"""Online controllers behind one step interface.

Three controllers share the receding-horizon contract (one scalar input per
step, buffers advance with realized data): the tube-based data-driven
controller (reachability-tightened constraints plus error feedback), the
plain data-driven baseline (raw boxes, no feedback term), and the known-model
MPC baseline.  The data-driven ones consume offline artifacts only; the MPC
baseline is handed the true model by the simulator.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .datasets import HankelSet
from .learning import FeedbackGain, NoiseSpec, SystemMatrixSet
from .optim import CachedQpSolver, QpProblem
from .platoon import PlatoonModel
from .reach import (
    InfeasibleTighteningError,
    ReachTube,
    TightenedBounds,
    hold_tail,
    propagate_error_tube,
    raw_bounds,
    tighten_constraints,
)
from .sets import Zonotope


class ConfigurationError(ValueError):
    """Controller wired with missing or inconsistent artifacts."""


@dataclass(frozen=True)
class ControllerConfig:
    t_ini: int = 20
    n_horizon: int = 5
    rho_s: float = 0.5
    rho_v: float = 1.0
    xi: float = 0.6
    r_input: float = 0.1
    lambda_g: float = 10.0
    lambda_sigma: float = 10.0
    x_max: tuple = (7.0, 7.0)       # per-vehicle (spacing, velocity) box
    u_max: float = 5.0
    reduction_budget: int = 20
    r0_mode: str = "point"          # "point" re-anchors; "noise" widens to Z_omega
    tube_depth: int | None = 2      # hold tightening beyond this offset; None = full
    qp_tol: float = 1e-6
    qp_max_iter: int = 2000         # fall back rather than grind a hard step

    def __post_init__(self):
        if not (0.0 < self.xi <= 1.0):
            raise ValueError("xi must lie in (0, 1]")
        if min(self.rho_s, self.rho_v, self.r_input) < 0:
            raise ValueError("weights must be nonnegative")
        if self.lambda_g <= 0 or self.lambda_sigma <= 0:
            raise ValueError("regularization coefficients must be positive")
        if self.r0_mode not in ("point", "noise"):
            raise ValueError(f"unknown r0_mode {self.r0_mode!r}")

    def state_weight(self, n_vehicles: int) -> np.ndarray:
        """diag(Qx, xi Qx, ..., xi^(n-1) Qx) as a (2n,) diagonal."""
        decay = self.xi ** np.arange(n_vehicles)
        return np.concatenate([[self.rho_s * d, self.rho_v * d] for d in decay])

    def state_box(self, n_vehicles: int) -> np.ndarray:
        x = np.asarray(self.x_max, dtype=float)
        if x.shape[0] == 2:
            x = np.tile(x, n_vehicles)
        if x.shape[0] != 2 * n_vehicles:
            raise ValueError("x_max must have 2 or 2n entries")
        return x


class RollingBuffers:
    """Time-aligned FIFO windows of the past t_ini samples of (x, u, e, f)."""

    def __init__(self, t_ini: int, dim: int):
        self.t_ini = t_ini
        self.dim = dim
        self._x = np.zeros((t_ini, dim))
        self._u = np.zeros(t_ini)
        self._e = np.zeros(t_ini)
        self._f = np.zeros(t_ini)
        self._count = 0

    @property
    def full(self) -> bool:
        return self._count >= self.t_ini

    def push(self, x, u: float, e: float, f: float) -> None:
        self._x = np.roll(self._x, -1, axis=0)
        self._u = np.roll(self._u, -1)
        self._e = np.roll(self._e, -1)
        self._f = np.roll(self._f, -1)
        self._x[-1] = x
        self._u[-1] = u
        self._e[-1] = e
        self._f[-1] = f
        self._count += 1

    @property
    def x_ini(self) -> np.ndarray:
        return self._x.reshape(-1)

    @property
    def u_ini(self) -> np.ndarray:
        return self._u.copy()

    @property
    def e_ini(self) -> np.ndarray:
        return self._e.copy()

    @property
    def f_ini(self) -> np.ndarray:
        return self._f.copy()


@dataclass(frozen=True)
class StepResult:
    u_applied: float
    u_nominal: float
    x_nominal: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def assemble_deepc_qp(
    hankels: HankelSet,
    buffers: RollingBuffers,
    bounds: TightenedBounds,
    cfg: ControllerConfig,
) -> QpProblem:
    """Reduce the data-driven predictive problem to a QP in g alone.

    The nominal trajectory is read off the future Hankel rows (x_z = Xf g,
    u_z = Uf g); the initial-state residual sigma = Xp g - x_ini folds into
    the objective with weight lambda_sigma; past inputs and the
    zero-future-disturbance rows stay as equalities.
    """
    if not buffers.full:
        raise ConfigurationError("buffers not full; controller still warming up")
    if bounds.x_bounds[0].dim != buffers.dim:
        raise ConfigurationError(
            f"bounds dimension {bounds.x_bounds[0].dim} does not match state dim {buffers.dim}"
        )
    n_vehicles = buffers.dim // 2
    N = hankels.horizon
    q_diag = np.tile(cfg.state_weight(n_vehicles), N)
    H = 2.0 * (
        (hankels.xf.T * q_diag) @ hankels.xf
        + cfg.r_input * hankels.uf.T @ hankels.uf
        + cfg.lambda_g * np.eye(hankels.ncols)
        + cfg.lambda_sigma * hankels.xp.T @ hankels.xp
    )
    q = -2.0 * cfg.lambda_sigma * hankels.xp.T @ buffers.x_ini
    A_eq = np.vstack([hankels.up, hankels.ep, hankels.fp, hankels.ef, hankels.ff])
    b_eq = np.concatenate(
        [buffers.u_ini, buffers.e_ini, buffers.f_ini, np.zeros(2 * N)]
    )
    A_in = np.vstack([hankels.xf, hankels.uf])
    lo = np.concatenate(
        [np.concatenate([bounds.x_bounds[i].lower for i in range(N)]),
         np.concatenate([bounds.u_bounds[i].lower for i in range(N)])]
    )
    hi = np.concatenate(
        [np.concatenate([bounds.x_bounds[i].upper for i in range(N)]),
         np.concatenate([bounds.u_bounds[i].upper for i in range(N)])]
    )
    return QpProblem(0.5 * (H + H.T), q, A_eq, b_eq, A_in, lo, hi)


class _DeepcBase:
    """Shared machinery: cached QP pieces, buffers, warm starts."""

    def __init__(self, hankels: HankelSet, cfg: ControllerConfig, dim: int,
                 bounds: TightenedBounds):
        self.hankels = hankels
        self.cfg = cfg
        self.dim = dim
        self.n_vehicles = dim // 2
        self.buffers = RollingBuffers(cfg.t_ini, dim)
        if hankels.t_ini != cfg.t_ini or hankels.horizon != cfg.n_horizon:
            raise ConfigurationError(
                f"hankel partition ({hankels.t_ini}, {hankels.horizon}) does not match "
                f"config ({cfg.t_ini}, {cfg.n_horizon})"
            )
        N = cfg.n_horizon
        q_diag = np.tile(cfg.state_weight(self.n_vehicles), N)
        H = 2.0 * (
            (hankels.xf.T * q_diag) @ hankels.xf
            + cfg.r_input * hankels.uf.T @ hankels.uf
            + cfg.lambda_g * np.eye(hankels.ncols)
            + cfg.lambda_sigma * hankels.xp.T @ hankels.xp
        )
        self._A_eq = np.vstack([hankels.up, hankels.ep, hankels.fp, hankels.ef, hankels.ff])
        self._A_in = np.vstack([hankels.xf, hankels.uf])
        self._solver = CachedQpSolver(0.5 * (H + H.T), self._A_eq, self._A_in,
                                      check_psd=False)
        self._ineq_lo = np.concatenate(
            [np.concatenate([bounds.x_bounds[i].lower for i in range(N)]),
             np.concatenate([bounds.u_bounds[i].lower for i in range(N)])]
        )
        self._ineq_hi = np.concatenate(
            [np.concatenate([bounds.x_bounds[i].upper for i in range(N)]),
             np.concatenate([bounds.u_bounds[i].upper for i in range(N)])]
        )

    def record(self, x, u: float, e: float, f: float) -> None:
        """Advance the buffers with one realized sample."""
        self.buffers.push(x, u, e, f)

    def set_window(self, x_win, u_win, e_win, f_win) -> None:
        """Replace the whole past window at once.

        The harness re-expresses raw history in the current equilibrium frame
        every step (the operating point moves with the head vehicle), so the
        window arrives rebuilt rather than incrementally pushed.
        """
        buf = self.buffers
        x_win = np.asarray(x_win, dtype=float)
        if x_win.shape != (buf.t_ini, buf.dim):
            raise ConfigurationError(f"window shape {x_win.shape} != ({buf.t_ini}, {buf.dim})")
        buf._x[:] = x_win
        buf._u[:] = u_win
        buf._e[:] = e_win
        buf._f[:] = f_win
        buf._count = max(buf._count, buf.t_ini)

    def _solve_nominal(self):
        cfg = self.cfg
        q = -2.0 * cfg.lambda_sigma * self.hankels.xp.T @ self.buffers.x_ini
        b_eq = np.concatenate(
            [self.buffers.u_ini, self.buffers.e_ini, self.buffers.f_ini,
             np.zeros(2 * cfg.n_horizon)]
        )
        lo = np.concatenate([b_eq, self._ineq_lo])
        hi = np.concatenate([b_eq, self._ineq_hi])
        return self._solver.solve(q, lo, hi, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)

    def _nominal_from(self, g: np.ndarray):
        x_z0 = self.hankels.xf[: self.dim] @ g
        u_z0 = float(self.hankels.uf[0] @ g)
        sigma = self.hankels.xp @ g - self.buffers.x_ini
        return x_z0, u_z0, float(np.linalg.norm(sigma))


class RdeepLccController(_DeepcBase):
    """Tube-based data-driven controller: tightened boxes + error feedback."""

    def __init__(self, hankels: HankelSet, mset: SystemMatrixSet, k_gain: FeedbackGain,
                 spec: NoiseSpec, cfg: ControllerConfig):
        if mset is None or k_gain is None or hankels is None:
            raise ConfigurationError("offline artifacts (hankels, mset, k_gain) required")
        dim = mset.dim
        r0 = spec.z_omega(dim) if cfg.r0_mode == "noise" else Zonotope.point(np.zeros(dim))
        self.tube = propagate_error_tube(
            mset, k_gain, spec, r0, cfg.n_horizon, budget=cfg.reduction_budget
        )
        # tighten to the configured depth and hold; back off when the family
        # tube outgrows the box before that depth (recorded, never silent)
        depth = cfg.n_horizon if cfg.tube_depth is None else min(cfg.tube_depth, cfg.n_horizon)
        bounds = None
        while depth >= 0:
            head = ReachTube(sets=self.tube.sets[: depth + 1],
                             hulls=self.tube.hulls[: depth + 1])
            try:
                bounds = tighten_constraints(head, k_gain, cfg.state_box(dim // 2), cfg.u_max)
                break
            except InfeasibleTighteningError:
                depth -= 1
        if bounds is None:
            raise InfeasibleTighteningError(0, 0, float("inf"), cfg.u_max, "state")
        full = TightenedBounds(
            x_bounds=bounds.x_bounds + (bounds.x_bounds[-1],) * (cfg.n_horizon - depth),
            u_bounds=bounds.u_bounds + (bounds.u_bounds[-1],) * (cfg.n_horizon - depth),
        )
        self.bounds = full
        self.tube_depth_used = depth
        super().__init__(hankels, cfg, dim, full)
        self.k_gain = k_gain
        # corrections beyond the certified one-step error scale are predictor
        # slack, not realized error; clamping them is defense in depth
        from .sets import interval_hull, linear_map

        hull_ku = interval_hull(linear_map(k_gain.k, self.tube.sets[min(1, len(self.tube.sets) - 1)]))
        self._corr_cap = float(np.abs(hull_ku.center)[0] + hull_ku.radius[0] + 0.5)

    def step(self, x_measured) -> StepResult:
        x = np.asarray(x_measured, dtype=float)
        t0 = time.perf_counter()
        if not self.buffers.full:
            return StepResult(0.0, 0.0, np.zeros(self.dim), {
                "qp_status": "warmup", "solve_ms": 0.0, "sigma_norm": 0.0,
                "fallback_used": False, "qp_iterations": 0,
            })
        sol = self._solve_nominal()
        K = self.k_gain.k[0]
        if sol.status == "optimal":
            x_z0, u_z0, sig = self._nominal_from(sol.primal)
            corr = float(np.clip(K @ (x - x_z0), -self._corr_cap, self._corr_cap))
            u = u_z0 + corr
            fallback = False
        else:
            x_z0, u_z0, sig = np.zeros(self.dim), 0.0, 0.0
            u = float(np.clip(K @ x, -self._corr_cap, self._corr_cap))
            fallback = True
        u_applied = float(np.clip(u, -self.cfg.u_max, self.cfg.u_max))
        return StepResult(u_applied, u_z0, x_z0, {
            "qp_status": sol.status,
            "solve_ms": 1e3 * (time.perf_counter() - t0),
            "sigma_norm": sig,
            "fallback_used": fallback,
            "qp_iterations": sol.iterations,
        })


class DeepcController(_DeepcBase):
    """Plain data-driven baseline: raw boxes, nominal input applied as-is."""

    def __init__(self, hankels: HankelSet, cfg: ControllerConfig, dim: int):
        bounds = raw_bounds(cfg.state_box(dim // 2), cfg.u_max, cfg.n_horizon)
        super().__init__(hankels, cfg, dim, bounds)

    def step(self, x_measured) -> StepResult:
        t0 = time.perf_counter()
        if not self.buffers.full:
            return StepResult(0.0, 0.0, np.zeros(self.dim), {
                "qp_status": "warmup", "solve_ms": 0.0, "sigma_norm": 0.0,
                "fallback_used": False, "qp_iterations": 0,
            })
        sol = self._solve_nominal()
        if sol.status == "optimal":
            x_z0, u_z0, sig = self._nominal_from(sol.primal)
            fallback = False
        else:
            x_z0, u_z0, sig = np.zeros(self.dim), 0.0, 0.0
            fallback = True
        u_applied = float(np.clip(u_z0, -self.cfg.u_max, self.cfg.u_max))
        return StepResult(u_applied, u_z0, x_z0, {
            "qp_status": sol.status,
            "solve_ms": 1e3 * (time.perf_counter() - t0),
            "sigma_norm": sig,
            "fallback_used": fallback,
            "qp_iterations": sol.iterations,
        })


class MpcController:
    """Known-model MPC: condensed QP over the input sequence, raw boxes."""

    def __init__(self, model: PlatoonModel, cfg: ControllerConfig):
        self.model = model
        self.cfg = cfg
        self.dim = model.dim
        N = cfg.n_horizon
        d = self.dim
        A, B = model.A, model.B
        # x(k+i) = A^i x + sum_j A^(i-1-j) B u_j, stacked for i = 1..N-1
        powers = [np.eye(d)]
        for _ in range(N):
            powers.append(A @ powers[-1])
        self._S_x = np.vstack([powers[i] for i in range(1, N)])  # ((N-1)d, d)
        S_u = np.zeros(((N - 1) * d, N))
        for i in range(1, N):
            for j in range(i):
                S_u[(i - 1) * d : i * d, j : j + 1] = powers[i - 1 - j] @ B
        self._S_u = S_u
        q_diag = np.tile(cfg.state_weight(model.n), N - 1)
        H = 2.0 * ((S_u.T * q_diag) @ S_u + cfg.r_input * np.eye(N))
        self._q_map = 2.0 * (S_u.T * q_diag) @ self._S_x
        x_box = cfg.state_box(model.n)
        A_in = np.vstack([S_u, np.eye(N)])
        self._solver = CachedQpSolver(0.5 * (H + H.T), None, A_in, check_psd=False)
        self._x_lo = np.tile(-x_box, N - 1)
        self._x_hi = np.tile(x_box, N - 1)
        self._u_cap = cfg.u_max

    def record(self, x, u: float, e: float, f: float) -> None:
        pass  # model-based; nothing to learn from the stream

    def step(self, x_measured) -> StepResult:
        x = np.asarray(x_measured, dtype=float)
        t0 = time.perf_counter()
        q = self._q_map @ x
        free = self._S_x @ x
        N = self.cfg.n_horizon
        lo = np.concatenate([self._x_lo - free, np.full(N, -self._u_cap)])
        hi = np.concatenate([self._x_hi - free, np.full(N, self._u_cap)])
        sol = self._solver.solve(q, lo, hi, tol=self.cfg.qp_tol,
                                 max_iter=self.cfg.qp_max_iter)
        if sol.status == "optimal":
            u0 = float(np.clip(sol.primal[0], -self._u_cap, self._u_cap))
            fallback = False
        else:
            u0, fallback = 0.0, True
        x_pred = self.model.A @ x + self.model.B.ravel() * u0
        return StepResult(u0, u0, x_pred, {
            "qp_status": sol.status,
            "solve_ms": 1e3 * (time.perf_counter() - t0),
            "sigma_norm": 0.0,
            "fallback_used": fallback,
            "qp_iterations": sol.iterations,
        })
