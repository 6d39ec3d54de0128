import math

import numpy as np
import pytest

from platoonctl.platoon import (
    DEFAULT_HDV,
    HdvParams,
    PlantState,
    build_discrete_model,
    desired_velocity,
    equilibrium_spacing,
    equilibrium_state,
    error_state,
    linearize_hdv,
    ovm_acceleration,
    plant_step,
)


class TestEquilibriumSpacing:
    def test_symmetric_midpoint(self):
        assert equilibrium_spacing(DEFAULT_HDV, 18.0) == pytest.approx(20.0)

    def test_low_velocity_limit(self):
        assert equilibrium_spacing(DEFAULT_HDV, 1e-9) == pytest.approx(5.0, abs=1e-3)

    def test_fitted_driver_params(self):
        p = HdvParams(0.6, 0.9, 36.0, 4.6, 30.6)
        s = equilibrium_spacing(p, 18.0)
        assert s == pytest.approx(17.6, abs=1e-9)
        assert desired_velocity(p, s) == pytest.approx(18.0, abs=1e-9)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            equilibrium_spacing(DEFAULT_HDV, 36.0)
        with pytest.raises(ValueError):
            equilibrium_spacing(DEFAULT_HDV, -1.0)


class TestLinearize:
    def test_reference_values(self):
        g1, g2, g3 = linearize_hdv(DEFAULT_HDV, 18.0)
        assert g1 == pytest.approx(0.36 * math.pi, rel=1e-12)
        assert g2 == pytest.approx(1.5)
        assert g3 == pytest.approx(0.9)

    def test_matches_finite_differences(self):
        p = HdvParams(0.5, 0.7, 30.0, 6.0, 40.0)
        v_star = 12.0
        s_star = equilibrium_spacing(p, v_star)
        g1, g2, g3 = linearize_hdv(p, v_star)
        h = 1e-6
        fd1 = (ovm_acceleration(p, s_star + h, v_star, v_star)
               - ovm_acceleration(p, s_star - h, v_star, v_star)) / (2 * h)
        fd2 = -(ovm_acceleration(p, s_star, v_star + h, v_star)
                - ovm_acceleration(p, s_star, v_star - h, v_star)) / (2 * h)
        fd3 = (ovm_acceleration(p, s_star, v_star, v_star + h)
               - ovm_acceleration(p, s_star, v_star, v_star - h)) / (2 * h)
        assert g1 == pytest.approx(fd1, rel=1e-6)
        assert g2 == pytest.approx(fd2, rel=1e-6)
        assert g3 == pytest.approx(fd3, rel=1e-6)


class TestOvmAcceleration:
    def test_equilibrium_fixed_point(self):
        assert ovm_acceleration(DEFAULT_HDV, 20.0, 18.0, 18.0) == pytest.approx(0.0)

    def test_min_spacing_branch(self):
        assert ovm_acceleration(DEFAULT_HDV, 5.0, 0.0, 0.0) == 0.0
        assert ovm_acceleration(DEFAULT_HDV, 2.0, 0.0, 0.0) == 0.0

    def test_saturation_branch(self):
        assert ovm_acceleration(DEFAULT_HDV, 35.0, 0.0, 0.0) == pytest.approx(21.6)
        assert ovm_acceleration(DEFAULT_HDV, 50.0, 0.0, 0.0) == pytest.approx(21.6)


class TestDiscreteModel:
    def test_cav_block_forward_euler(self):
        m = build_discrete_model(3, DEFAULT_HDV, 18.0, 0.05)
        assert np.allclose(m.A[:2, :2], [[1.0, -0.05], [0.0, 1.0]])
        assert np.allclose(m.B.ravel(), [0.0, 0.05, 0, 0, 0, 0])
        assert np.allclose(m.H.ravel(), [0.05, 0, 0, 0, 0, 0])
        assert np.allclose(m.J.ravel(), [0.0, 0.05, 0, 0, 0, 0])

    def test_block_structure(self):
        m = build_discrete_model(3, DEFAULT_HDV, 18.0, 0.05)
        assert m.A.shape == (6, 6)
        # upper-right coupling blocks are zero (no influence from followers)
        assert np.allclose(m.A[0:2, 2:6], 0.0)
        assert np.allclose(m.A[2:4, 4:6], 0.0)
        # actuation/disturbance rows confined to the controlled block
        assert np.allclose(m.B[2:], 0.0) and np.allclose(m.H[2:], 0.0)
        assert np.allclose(m.J[2:], 0.0)

    def test_golden_spectrum(self):
        m = build_discrete_model(3, DEFAULT_HDV, 18.0, 0.05)
        eig = np.sort_complex(np.linalg.eigvals(m.A))
        hdv_mode = 1.0 + 0.05 * (-0.75 - math.sqrt(4 * 0.36 * math.pi - 2.25) / 2 * 1j)
        expected = np.sort_complex(
            np.array([1.0, 1.0, hdv_mode, hdv_mode.conjugate(), hdv_mode, hdv_mode.conjugate()])
        )
        assert np.allclose(eig, expected, atol=1e-12)
        assert np.max(np.abs(eig)) <= 1.0 + 1e-12


class TestPlantStep:
    def setup_method(self):
        self.model = build_discrete_model(3, DEFAULT_HDV, 18.0, 0.05)

    def test_equilibrium_fixed_point(self):
        st = equilibrium_state(self.model)
        rng = np.random.default_rng(0)
        nxt = plant_step(self.model, st, 0.0, 0.0, 0.0, 18.0, rng)
        assert np.allclose(nxt.positions, st.positions + 18.0 * 0.05)
        assert np.allclose(nxt.velocities, st.velocities)
        assert nxt.time == pytest.approx(0.05)

    def test_double_integrator_cav(self):
        m = build_discrete_model(1, DEFAULT_HDV, 18.0, 0.05)
        st = equilibrium_state(m)
        nxt = plant_step(m, st, 0.4, 0.3, 0.0, 18.0, np.random.default_rng(0))
        assert nxt.velocities[1] == pytest.approx(18.0 + 0.7 * 0.05)

    def test_one_step_matches_linearization_quadratically(self):
        m = self.model
        rng = np.random.default_rng(3)
        direction = rng.normal(0, 1.0, 2 * m.n)

        def mismatch(scale):
            base = equilibrium_state(m)
            pos = base.positions.copy()
            vel = base.velocities.copy()
            pert = scale * direction
            pos[1:] -= np.cumsum(pert[0::2])
            vel[1:] += pert[1::2]
            st = PlantState(pos, vel, 0.0)
            x0 = error_state(st, m.s_star, m.v_star)
            u = 0.1 * scale
            nxt = plant_step(m, st, u, 0.0, 0.0, m.v_star, np.random.default_rng(1))
            x1 = error_state(nxt, m.s_star, m.v_star)
            x1_lin = m.A @ x0 + m.B.ravel() * u
            return np.max(np.abs(x1 - x1_lin))

        # cutting the deviation in half should cut the residual superlinearly
        big, small = mismatch(0.4), mismatch(0.2)
        assert big < 1e-4
        assert small < big / 2.5

    def test_deterministic_given_seed(self):
        st = equilibrium_state(self.model)
        a = plant_step(self.model, st, 0.1, -0.2, 0.02, 18.3, np.random.default_rng(42))
        b = plant_step(self.model, st, 0.1, -0.2, 0.02, 18.3, np.random.default_rng(42))
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.velocities, b.velocities)

    def test_noise_hits_each_state_component(self):
        st = equilibrium_state(self.model)
        nxt = plant_step(self.model, st, 0.0, 0.0, 0.05, 18.0, np.random.default_rng(5))
        x = error_state(nxt, self.model.s_star, self.model.v_star)
        # every component perturbed but inside the bound (spacing also moves by dt*dv=0)
        assert np.all(np.abs(x) <= 0.05 + 1e-12)
        assert np.count_nonzero(x) == 6

    def test_velocity_clamped_at_zero(self):
        m = build_discrete_model(1, DEFAULT_HDV, 18.0, 0.05)
        st = PlantState(np.array([0.0, -20.0]), np.array([0.0, 0.1]), 0.0)
        nxt = plant_step(m, st, -50.0, 0.0, 0.0, 0.0, np.random.default_rng(0))
        assert nxt.velocities[1] == 0.0

    def test_error_state_zero_at_equilibrium(self):
        st = equilibrium_state(self.model)
        x = error_state(st, self.model.s_star, self.model.v_star)
        assert np.allclose(x, 0.0)


class TestHdvParamsValidation:
    def test_rejects_bad_bounds(self):
        with pytest.raises(ValueError):
            HdvParams(0.6, 0.9, 36.0, 35.0, 5.0)
        with pytest.raises(ValueError):
            HdvParams(-0.6, 0.9, 36.0, 5.0, 35.0)
