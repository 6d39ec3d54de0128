"""Excitation data collection, sequence shaping, and Hankel construction.

Two recipes are first-class: the general recipe excites control, head-vehicle
disturbance, and attack channels simultaneously (feeds identification and the
Hankel predictor); the gain recipe keeps disturbance and attack at zero
(feeds the feedback-gain synthesis).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .platoon import (
    PlatoonModel,
    equilibrium_state,
    error_state,
    linearize_hdv,
    ovm_acceleration,
    plant_step,
)

# substream labels so noise/attack/excitation draws stay independent per seed
_STREAM_U, _STREAM_E, _STREAM_F, _STREAM_W = 11, 13, 17, 19


@dataclass(frozen=True)
class ExcitationDataset:
    """Recorded sequences of length T+1 plus collection metadata."""

    u: np.ndarray    # (T+1,) control input
    e: np.ndarray    # (T+1,) head-vehicle velocity error
    f: np.ndarray    # (T+1,) attack input
    x: np.ndarray    # (T+1, 2n) error states
    meta: dict

    def __post_init__(self):
        if not (len(self.u) == len(self.e) == len(self.f) == len(self.x)):
            raise ValueError("sequences must share length T+1")

    @property
    def T(self) -> int:
        return len(self.u) - 1

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class SequenceViews:
    """Shifted views: minus-sequences drop the last sample, x_plus the first."""

    u_minus: np.ndarray  # (T,)
    e_minus: np.ndarray  # (T,)
    f_minus: np.ndarray  # (T,)
    x_minus: np.ndarray  # (2n, T)
    x_plus: np.ndarray   # (2n, T)

    @property
    def T(self) -> int:
        return self.x_minus.shape[1]

    @property
    def dim(self) -> int:
        return self.x_minus.shape[0]


@dataclass(frozen=True)
class HankelSet:
    """Depth-L block Hankel matrices partitioned into past/future rows."""

    up: np.ndarray
    uf: np.ndarray
    ep: np.ndarray
    ef: np.ndarray
    fp: np.ndarray
    ff: np.ndarray
    xp: np.ndarray
    xf: np.ndarray
    t_ini: int
    horizon: int

    @property
    def ncols(self) -> int:
        return self.up.shape[1]


def collect_excitation(
    model: PlatoonModel,
    T: int,
    ranges: dict | None = None,
    noise_bound: float = 0.0,
    seed: int = 0,
    plant: str = "nonlinear",
    t_ini: int = 20,
    horizon: int = 5,
    hold: int = 1,
    cav_mode: str = "external",
) -> ExcitationDataset:
    """Run the plant around equilibrium under uniform random excitation.

    ranges maps channel names to amplitudes, default {'u': 0.2, 'e': 0.5,
    'f': 0.3}; set 'e' and 'f' to zero for the gain-learning recipe.  With
    plant='linear' the discrete error-state model does the updates instead of
    the nonlinear car-following plant (useful when exactness matters).
    hold=1 draws i.i.d. inputs per step; hold>1 keeps each draw for that many
    steps, concentrating excitation at low frequency.

    cav_mode='external' applies the drawn input directly (open loop, states
    drift).  cav_mode='stock' lets the controlled vehicle car-follow like the
    rest with the drawn input added as dither; states stay bounded, which
    conditions the data much better for gain synthesis.  The recorded u is
    always the total input seen by the input channel.
    """
    amp = {"u": 0.2, "e": 0.5, "f": 0.3}
    if ranges:
        amp.update(ranges)
    sufficient = 2 * (t_ini + horizon + model.dim) - 1
    if T < sufficient:
        warnings.warn(
            f"T={T} below the sufficient excitation length {sufficient}; "
            "the rank check is authoritative",
            stacklevel=2,
        )

    rng_u = np.random.default_rng([seed, _STREAM_U])
    rng_e = np.random.default_rng([seed, _STREAM_E])
    rng_f = np.random.default_rng([seed, _STREAM_F])
    rng_w = np.random.default_rng([seed, _STREAM_W])

    def draw(rng, amplitude):
        vals = amplitude * rng.uniform(-1.0, 1.0, T + 1)
        if hold > 1:
            vals = np.repeat(vals[: (T + hold) // hold + 1], hold)[: T + 1]
        return vals

    u = draw(rng_u, amp["u"])
    e = draw(rng_e, amp["e"])
    f = draw(rng_f, amp["f"])
    if cav_mode not in ("external", "stock"):
        raise ValueError(f"unknown cav_mode {cav_mode!r}")

    x = np.empty((T + 1, model.dim))
    if plant == "linear":
        x[0] = 0.0
        b, h, j = model.B.ravel(), model.H.ravel(), model.J.ravel()
        if cav_mode == "stock":
            # linearized car-following feedback for the controlled slot keeps
            # the recorded data exactly consistent with (A, B, H, J)
            g1, g2, g3 = linearize_hdv(model.hdv[0], model.v_star)
            k_row = np.zeros(model.dim)
            k_row[0], k_row[1] = g1, -g2
        for k in range(T):
            if cav_mode == "stock":
                u[k] = k_row @ x[k] + g3 * e[k] + u[k]
            w = noise_bound * rng_w.uniform(-1.0, 1.0, model.dim)
            x[k + 1] = model.A @ x[k] + b * u[k] + h * e[k] + j * f[k] + w
        if cav_mode == "stock":
            u[T] = k_row @ x[T] + g3 * e[T] + u[T]
    elif plant == "nonlinear":
        state = equilibrium_state(model)
        for k in range(T):
            x[k] = error_state(state, model.s_star, model.v_star)
            if cav_mode == "stock":
                s = state.spacings()[0]
                u[k] = ovm_acceleration(
                    model.hdv[0], s, state.velocities[1], state.velocities[0]
                ) + u[k]
            state = plant_step(
                model, state, u[k], f[k], noise_bound, model.v_star + e[k], rng_w
            )
        x[T] = error_state(state, model.s_star, model.v_star)
        if cav_mode == "stock":
            s = state.spacings()[0]
            u[T] = ovm_acceleration(
                model.hdv[0], s, state.velocities[1], state.velocities[0]
            ) + u[T]
    else:
        raise ValueError(f"unknown plant kind {plant!r}")

    meta = {
        "n": model.n,
        "dt": model.dt,
        "v_star": model.v_star,
        "noise_bound": noise_bound,
        "seed": seed,
        "plant": plant,
        "ranges": amp,
        "hold": hold,
        "cav_mode": cav_mode,
    }
    return ExcitationDataset(u=u, e=e, f=f, x=x, meta=meta)


def build_sequences(ds: ExcitationDataset) -> SequenceViews:
    T = ds.T
    if T < 1:
        raise ValueError("need at least one transition")
    return SequenceViews(
        u_minus=ds.u[:T].copy(),
        e_minus=ds.e[:T].copy(),
        f_minus=ds.f[:T].copy(),
        x_minus=ds.x[:T].T.copy(),
        x_plus=ds.x[1:].T.copy(),
    )


def build_hankel(signal: np.ndarray, L: int) -> np.ndarray:
    """Block Hankel matrix with L block rows: entry (i, j) is sample i + j.

    Accepts scalar sequences (T,) or vector sequences (T, d); the output has
    L*d rows and T - L + 1 columns.
    """
    sig = np.asarray(signal, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    T, d = sig.shape
    if T < L:
        raise ValueError(f"sequence length {T} shorter than Hankel depth {L}")
    cols = T - L + 1
    H = np.empty((L * d, cols))
    for i in range(L):
        H[i * d : (i + 1) * d, :] = sig[i : i + cols].T
    return H


def build_hankel_set(views: SequenceViews, t_ini: int, horizon: int) -> HankelSet:
    """Depth-(t_ini + horizon) Hankels of all four signals, split past/future."""
    L = t_ini + horizon
    hu = build_hankel(views.u_minus, L)
    he = build_hankel(views.e_minus, L)
    hf = build_hankel(views.f_minus, L)
    hx = build_hankel(views.x_minus.T, L)
    d = views.dim
    return HankelSet(
        up=hu[:t_ini], uf=hu[t_ini:],
        ep=he[:t_ini], ef=he[t_ini:],
        fp=hf[:t_ini], ff=hf[t_ini:],
        xp=hx[: t_ini * d], xf=hx[t_ini * d :],
        t_ini=t_ini, horizon=horizon,
    )


@dataclass(frozen=True)
class RankReport:
    """Numerical ranks of the stacked data matrices with full-row-rank flags."""

    rank_full_stack: int
    rank_xu_stack: int
    rows_full_stack: int
    rows_xu_stack: int
    singular_values_full: np.ndarray
    singular_values_xu: np.ndarray

    @property
    def ok_identification(self) -> bool:
        return self.rank_full_stack == self.rows_full_stack

    @property
    def ok_gain(self) -> bool:
        return self.rank_xu_stack == self.rows_xu_stack


RANK_RTOL = 1e-8  # singular values above this fraction of the largest count


def _numrank(mat: np.ndarray) -> tuple:
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0:
        return 0, sv
    return int(np.sum(sv > RANK_RTOL * sv[0])), sv


def check_persistent_excitation(views: SequenceViews) -> RankReport:
    full = np.vstack([views.x_minus, views.u_minus, views.e_minus, views.f_minus])
    xu = np.vstack([views.x_minus, views.u_minus])
    r_full, sv_full = _numrank(full)
    r_xu, sv_xu = _numrank(xu)
    return RankReport(
        rank_full_stack=r_full,
        rank_xu_stack=r_xu,
        rows_full_stack=full.shape[0],
        rows_xu_stack=xu.shape[0],
        singular_values_full=sv_full,
        singular_values_xu=sv_xu,
    )


def save_dataset(ds: ExcitationDataset, path) -> None:
    doc = {
        "meta": ds.meta,
        "u": ds.u.tolist(),
        "e": ds.e.tolist(),
        "f": ds.f.tolist(),
        "x": ds.x.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_dataset(path) -> ExcitationDataset:
    with open(path) as fh:
        doc = json.load(fh)
    return ExcitationDataset(
        u=np.array(doc["u"], dtype=float),
        e=np.array(doc["e"], dtype=float),
        f=np.array(doc["f"], dtype=float),
        x=np.array(doc["x"], dtype=float),
        meta=doc["meta"],
    )


def export_csv(ds: ExcitationDataset, path) -> None:
    """Columns t, u, e, f, s1, v1, ..., sn, vn (error coordinates)."""
    n = ds.dim // 2
    dt = ds.meta.get("dt", 1.0)
    header = ["t", "u", "e", "f"]
    for i in range(1, n + 1):
        header += [f"s{i}", f"v{i}"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(ds.T + 1):
            row = [repr(k * dt), repr(float(ds.u[k])), repr(float(ds.e[k])), repr(float(ds.f[k]))]
            row += [repr(float(v)) for v in ds.x[k]]
            fh.write(",".join(row) + "\n")
