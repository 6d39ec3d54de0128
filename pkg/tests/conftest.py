import numpy as np
import pytest

from platoonctl.datasets import build_hankel_set, build_sequences, collect_excitation
from platoonctl.learning import (
    NoiseSpec,
    build_noise_matrix_zonotope,
    build_system_matrix_set,
    solve_feedback_gain,
)
from platoonctl.platoon import DEFAULT_HDV, build_discrete_model

# synthesis uses a reduced noise-energy level: the printed quadratic noise
# model is infeasible at the full bound for slow platoon dynamics (see README)
GAIN_PHI_OMEGA = 0.002


@pytest.fixture(scope="session")
def model():
    return build_discrete_model(3, DEFAULT_HDV, 18.0, 0.05)


@pytest.fixture(scope="session")
def spec02():
    return NoiseSpec(epsilon_max=0.5, theta_max=2.0, omega_max=0.02)


@pytest.fixture(scope="session")
def noisy_views(model):
    ds = collect_excitation(model, 600, noise_bound=0.02, seed=0, plant="linear")
    return build_sequences(ds)


@pytest.fixture(scope="session")
def clean_views(model):
    ds = collect_excitation(model, 600, noise_bound=0.0, seed=0, plant="linear")
    return build_sequences(ds)


@pytest.fixture(scope="session")
def mset02(noisy_views, spec02):
    m_omega = build_noise_matrix_zonotope(spec02, noisy_views.T, 3)
    return build_system_matrix_set(noisy_views, m_omega)


@pytest.fixture(scope="session")
def gain(model, spec02, mset02):
    ds = collect_excitation(
        model, 600, ranges={"e": 0.0, "f": 0.0}, noise_bound=0.02, seed=1,
        plant="linear", cav_mode="stock",
    )
    from platoonctl.learning import solve_feedback_gain_auto

    g, _ = solve_feedback_gain_auto(build_sequences(ds), spec02, mset=mset02)
    return g


@pytest.fixture(scope="session")
def clean_hankels(clean_views):
    return build_hankel_set(clean_views, t_ini=20, horizon=5)


@pytest.fixture(scope="session")
def noisy_hankels(noisy_views):
    return build_hankel_set(noisy_views, t_ini=20, horizon=5)
