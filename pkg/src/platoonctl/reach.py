"""Error-state reachable tubes and constraint tightening.

The tube recursion propagates the identified model family over the product of
the current error set, its feedback image, and the disturbance/attack sets,
then adds the state-noise set and caps generator growth.  Tightening
subtracts the tube's interval hull (plus |center| for off-center sets) from
the raw state/input boxes; an empty tightened interval is an error, never a
silent clamp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .learning import FeedbackGain, NoiseSpec, SystemMatrixSet
from .sets import (
    Interval,
    Zonotope,
    cartesian_product,
    interval_hull,
    linear_map,
    matzono_map,
    minkowski_sum,
    reduce_order,
)


class InfeasibleTighteningError(RuntimeError):
    """Tube radius swallows the whole constraint box at some step."""

    def __init__(self, step: int, dim: int, radius: float, bound: float, kind: str):
        super().__init__(
            f"{kind} tightening empty at step {step}, dim {dim}: "
            f"radius {radius:.4g} >= bound {bound:.4g}"
        )
        self.step = step
        self.dim = dim


@dataclass(frozen=True)
class ReachTube:
    """Error reachable sets for horizon offsets 0..N and their interval hulls."""

    sets: tuple
    hulls: tuple

    @property
    def horizon(self) -> int:
        return len(self.sets) - 1


@dataclass(frozen=True)
class TightenedBounds:
    """Per-step nominal-state and nominal-input boxes, one per tube offset."""

    x_bounds: tuple  # Interval, dimension 2n
    u_bounds: tuple  # Interval, scalar

    def __len__(self) -> int:
        return len(self.x_bounds)


def propagate_error_tube(
    mset: SystemMatrixSet,
    k_gain: FeedbackGain,
    spec: NoiseSpec,
    r0: Zonotope,
    n_horizon: int,
    budget: int = 20,
) -> ReachTube:
    """Recursive data-driven error tube: offsets 0..n_horizon.

    Step i+1 maps the product set (R_i x K R_i x Z_eps x Z_theta) through the
    model family, adds the noise set, and reduces the generator count to the
    budget.  With a sound model family containing the true matrices, every
    closed-loop error trajectory under admissible disturbances stays inside.
    """
    if n_horizon < 1:
        raise ValueError("horizon must be at least 1")
    dim = mset.dim
    if r0.dim != dim:
        raise ValueError(f"initial set dim {r0.dim} does not match model dim {dim}")
    z_eps = spec.z_epsilon()
    z_theta = spec.z_theta()
    z_omega = spec.z_omega(dim)
    sets = [r0]
    current = r0
    for _ in range(n_horizon):
        prod = cartesian_product(
            cartesian_product(
                cartesian_product(current, linear_map(k_gain.k, current)), z_eps
            ),
            z_theta,
        )
        nxt = minkowski_sum(matzono_map(mset.mz, prod), z_omega)
        current = reduce_order(nxt, budget)
        sets.append(current)
    return ReachTube(sets=tuple(sets), hulls=tuple(interval_hull(s) for s in sets))


def _conservative_radius(hull: Interval) -> np.ndarray:
    # |center| + radius covers off-center error sets
    return np.abs(hull.center) + hull.radius


def tighten_constraints(
    tube: ReachTube,
    k_gain: FeedbackGain,
    x_max,
    u_max: float,
) -> TightenedBounds:
    """Shrink the raw boxes by the tube hulls, step by step."""
    x_max = np.asarray(x_max, dtype=float)
    dim = tube.sets[0].dim
    if x_max.shape[0] != dim:
        raise ValueError(f"x_max dimension {x_max.shape[0]} does not match tube dim {dim}")
    xs, us = [], []
    for i, zset in enumerate(tube.sets):
        r_x = _conservative_radius(tube.hulls[i])
        if np.any(r_x >= x_max):
            d = int(np.argmax(r_x - x_max))
            raise InfeasibleTighteningError(i, d, float(r_x[d]), float(x_max[d]), "state")
        xs.append(Interval(-x_max + r_x, x_max - r_x))
        r_u = _conservative_radius(interval_hull(linear_map(k_gain.k, zset)))[0]
        if r_u >= u_max:
            raise InfeasibleTighteningError(i, 0, float(r_u), float(u_max), "input")
        us.append(Interval([-u_max + r_u], [u_max - r_u]))
    return TightenedBounds(x_bounds=tuple(xs), u_bounds=tuple(us))


def raw_bounds(x_max, u_max: float, steps: int) -> TightenedBounds:
    """Untightened boxes, one per step (baselines and degenerate tubes)."""
    x_max = np.asarray(x_max, dtype=float)
    x = Interval(-x_max, x_max)
    u = Interval([-u_max], [u_max])
    return TightenedBounds(x_bounds=(x,) * steps, u_bounds=(u,) * steps)


def hold_tail(bounds: TightenedBounds, depth: int) -> TightenedBounds:
    """Reuse the depth-th tightening for all later steps.

    The receding-horizon loop re-anchors the error set at every step, so only
    the first moves' tightening carries the robust guarantee; holding the
    tail keeps long-horizon plans feasible when the open-loop family tube
    grows past the box.
    """
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    depth = min(depth, len(bounds) - 1)
    xs = list(bounds.x_bounds[: depth + 1])
    us = list(bounds.u_bounds[: depth + 1])
    while len(xs) < len(bounds):
        xs.append(xs[-1])
        us.append(us[-1])
    return TightenedBounds(x_bounds=tuple(xs), u_bounds=tuple(us))


def dump_tube_csv(tube: ReachTube, path) -> None:
    """Diagnostics dump: step, dim, hull_lo, hull_hi."""
    with open(path, "w") as fh:
        fh.write("step,dim,hull_lo,hull_hi\n")
        for i, hull in enumerate(tube.hulls):
            for d in range(hull.dim):
                fh.write(f"{i},{d},{hull.lower[d]!r},{hull.upper[d]!r}\n")
