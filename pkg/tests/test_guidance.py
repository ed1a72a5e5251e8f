import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from vrbsim.dynamics import VrbState, inertia
from vrbsim.errors import NotStabilizable, StaleGains
from vrbsim.guidance import (
    FLY_THROUGH,
    Waypoint,
    attitude_error,
    care_residual,
    design_attitude,
    design_translation,
    desired_agent_states,
    inertia_drift,
    local_agent_control,
    local_gains,
    make_design,
    reference_attitude,
    solve_care,
    wrench_command,
)
from vrbsim.rotation import quat_from_euler321, quat_multiply, quat_conjugate, rotation_vector

G = 9.81
S3 = np.sqrt(3.0)


def triangle_rel():
    R = 4 / S3
    return np.array([[-R / 2, -2.0, 0], [-R / 2, 2.0, 0], [R, 0, 0]])


def at_rest(r_cm, q=(1.0, 0, 0, 0), rel=None):
    rel = triangle_rel() if rel is None else rel
    return VrbState(np.asarray(r_cm, float), np.zeros(3), np.asarray(q, float), np.zeros(3), rel, np.zeros_like(rel))


class TestCare:
    def test_double_integrator_closed_form(self):
        # oracle: P = [[sqrt3, 1], [1, sqrt3]], K = [1, sqrt3] by hand
        sol = solve_care([[0, 1], [0, 0]], [[0], [1]], np.eye(2), [[1]])
        np.testing.assert_allclose(sol.K, [[1, S3]], atol=1e-12)
        np.testing.assert_allclose(sol.P, [[S3, 1], [1, S3]], atol=1e-12)

    def test_stable_plant_zero_cost(self):
        sol = solve_care(-np.eye(3), np.eye(3), np.zeros((3, 3)), np.eye(3))
        assert np.abs(sol.P).max() < 1e-12 and np.abs(sol.K).max() < 1e-12

    def test_unstabilizable(self):
        with pytest.raises(NotStabilizable):
            solve_care(np.eye(2), [[1.0], [0.0]], np.eye(2), [[1.0]])

    @pytest.mark.parametrize("seed", range(100))
    def test_random_against_scipy(self, seed):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, m))
        sol = solve_care(A, B, np.eye(n), np.eye(m))
        assert sol.residual < 1e-8
        assert care_residual(A, B, np.eye(n), np.eye(m), sol.P) == pytest.approx(sol.residual)
        assert np.linalg.eigvals(A - B @ sol.K).real.max() < -1e-6
        ref = scipy.linalg.solve_continuous_are(A, B, np.eye(n), np.eye(m))
        np.testing.assert_allclose(sol.P, ref, rtol=1e-7, atol=1e-9)


class TestDesigns:
    def test_translation_scales_with_mass(self):
        d = design_translation(3.0, (2.0, 4.0), 1.0)
        # oracle: m x'' = u with Q = diag(q1, q2), R = 1 -> k1 = sqrt(q1), k2 = sqrt(q2 m^2 ... ) solved by scipy
        B = np.array([[0.0], [1 / 3.0]])
        P = scipy.linalg.solve_continuous_are(np.array([[0.0, 1], [0, 0]]), B, np.diag([2.0, 4.0]), np.eye(1))
        np.testing.assert_allclose(d.K, B.T @ P, atol=1e-10)
        assert d.residual < 1e-8 and d.max_real_eig < -1e-6

    def test_attitude_triangle_all_axes(self):
        I = inertia(triangle_rel(), np.zeros((3, 3)), np.ones(3)).I_cm_b
        d = design_attitude(I)
        assert d.free_axes.shape == (3, 0) and d.residual < 1e-8 and d.max_real_eig < 0
        assert d.K.shape == (3, 6)
        # each principal axis gets the scalar gain of its own moment
        kz = design_translation(16.0, (20.0, 5.0)).K[0]
        np.testing.assert_allclose([d.K[2, 2], d.K[2, 5]], kz, atol=1e-10)

    def test_line_frees_its_axis(self):
        rel = np.array([[-4.0, 0, 0], [0, 0, 0], [4, 0, 0]])
        d = design_attitude(inertia(rel, np.zeros((3, 3)), np.ones(3)).I_cm_b)
        assert d.free_axes.shape == (3, 1)
        np.testing.assert_allclose(np.abs(d.free_axes[:, 0]), [1, 0, 0], atol=1e-12)
        assert not np.any(d.K[:, 0]) and not np.any(d.K[0])

    def test_drift_detects_collapsing_moment(self):
        I_tri = inertia(triangle_rel(), np.zeros((3, 3)), np.ones(3)).I_cm_b
        d = design_attitude(I_tri)
        assert inertia_drift(d, I_tri) == 0.0
        squashed = triangle_rel() * [1.0, 1.0, 0.0] + [0, 0, 0]
        squashed[:, 0] *= 0.1
        I_sq = inertia(squashed, np.zeros((3, 3)), np.ones(3)).I_cm_b
        # the whole-tensor relative change is modest but the y moment collapses
        assert inertia_drift(d, I_sq) > 0.5

    def test_drift_free_axis_regrowing(self):
        line = np.array([[-4.0, 0, 0], [0, 0, 0], [4, 0, 0]])
        d = design_attitude(inertia(line, np.zeros((3, 3)), np.ones(3)).I_cm_b)
        I_tri = inertia(triangle_rel(), np.zeros((3, 3)), np.ones(3)).I_cm_b
        assert inertia_drift(d, I_tri) == np.inf


class TestWrench:
    def design(self):
        return make_design(3.0, inertia(triangle_rel(), np.zeros((3, 3)), np.ones(3)).I_cm_b, gravity=G)

    def test_at_waypoint(self):
        d = self.design()
        st_ = at_rest([15, 15, 15])
        cmd = wrench_command(st_, inertia(st_.rel_pos_b, st_.rel_vel_b, np.ones(3)), Waypoint([15, 15, 15]), d)
        np.testing.assert_allclose(cmd.f_cm_b, [0, 0, 3 * G], atol=1e-12)
        assert np.abs(cmd.tau_cm_b).max() < 1e-12

    def test_altitude_error(self):
        d = self.design()
        st_ = at_rest([15, 15, 16])
        cmd = wrench_command(st_, inertia(st_.rel_pos_b, st_.rel_vel_b, np.ones(3)), Waypoint([15, 15, 15]), d)
        np.testing.assert_allclose(cmd.f_cm_b, [0, 0, 3 * G - d.translation.K[0, 0]], atol=1e-12)
        assert np.abs(cmd.tau_cm_b).max() < 1e-12

    def test_force_is_rotated_into_body(self):
        d = self.design()
        q = quat_from_euler321(np.deg2rad([0, 0, 90]))
        st_ = at_rest([16, 15, 15], q)
        cmd = wrench_command(st_, inertia(st_.rel_pos_b, st_.rel_vel_b, np.ones(3)), Waypoint([15, 15, 15], attitude_deg=[0, 0, 90]), d)
        # inertial -x push is body +y after a +90 deg yaw
        np.testing.assert_allclose(cmd.f_cm_b, [0, d.translation.K[0, 0], 3 * G], atol=1e-12)

    def test_quaternion_sign_does_not_matter(self):
        d = self.design()
        q = quat_from_euler321(np.deg2rad([10, -5, 30]))
        I = inertia(triangle_rel(), np.zeros((3, 3)), np.ones(3))
        wp = Waypoint([0, 0, 0], attitude_deg=[0, 0, -90])
        a = wrench_command(at_rest([0, 0, 0], q), I, wp, d)
        b = wrench_command(at_rest([0, 0, 0], -q), I, wp, d)
        np.testing.assert_allclose(a.tau_cm_b, b.tau_cm_b, atol=1e-12)
        np.testing.assert_allclose(attitude_error(q, wp.quaternion), attitude_error(-q, wp.quaternion), atol=1e-15)

    def test_stale_gains(self):
        d = self.design()
        line = np.array([[-4.0, 0, 0], [0, 0, 0], [4, 0, 0]])
        st_ = at_rest([0, 0, 0], rel=line)
        with pytest.raises(StaleGains):
            wrench_command(st_, inertia(line, np.zeros((3, 3)), np.ones(3)), Waypoint([0, 0, 0]), d)


class TestLocal:
    def test_static_waypoint_velocities(self):
        pos, vel = desired_agent_states(Waypoint([1, 2, 3], velocity=[0.5, 0, 0], hold=FLY_THROUGH), triangle_rel())
        np.testing.assert_allclose(vel, np.tile([0.5, 0, 0], (3, 1)))
        np.testing.assert_allclose(pos, triangle_rel() + [1, 2, 3])

    def test_spin_velocity(self):
        _, vel = desired_agent_states(Waypoint([0, 0, 0], rates_deg=[0, 0, np.rad2deg(1.0)]), np.array([[2.0, 0, 0]]))
        np.testing.assert_allclose(vel, [[0, 2, 0]], atol=1e-12)

    def test_yawed_waypoint_rotates_offsets(self):
        rel = triangle_rel()
        pos, _ = desired_agent_states(Waypoint([15, 15, 15], attitude_deg=[0, 0, -90]), rel)
        Rz = np.array([[0.0, 1, 0], [-1, 0, 0], [0, 0, 1]])  # -90 deg about z
        np.testing.assert_allclose(pos, rel @ Rz.T + 15, atol=1e-12)

    def test_agent_control(self):
        m = np.ones(2)
        K = local_gains(m)
        pos = np.array([[0.0, 0, 0], [1, 0, 0]])
        f = local_agent_control(pos, np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), m, K, G)
        np.testing.assert_allclose(f[0], [0, 0, G])
        np.testing.assert_allclose(f[1], [-K[1, 0], 0, G])

    def test_reference_attitude_is_rate_limited(self):
        q = np.array([1.0, 0, 0, 0])
        q_des = quat_from_euler321(np.deg2rad([180, 0, 30]))
        q_ref = reference_attitude(q, q_des, np.deg2rad(45))
        assert np.rad2deg(np.linalg.norm(rotation_vector(q_ref))) == pytest.approx(45.0)
        remaining = rotation_vector(quat_multiply(quat_conjugate(q_ref), q_des))
        assert np.rad2deg(np.linalg.norm(remaining)) == pytest.approx(135.0)
        near = quat_from_euler321(np.deg2rad([0, 0, 10]))
        np.testing.assert_array_equal(reference_attitude(q, near), near)


class TestWaypoint:
    def test_fly_through_needs_velocity(self):
        with pytest.raises(ValueError):
            Waypoint([0, 0, 0], hold=FLY_THROUGH)

    @settings(max_examples=25)
    @given(st.floats(-179, 179))
    def test_quaternion_yaw(self, yaw):
        wp = Waypoint([0, 0, 0], attitude_deg=[0, 0, yaw])
        np.testing.assert_allclose(wp.quaternion, [np.cos(np.deg2rad(yaw) / 2), 0, 0, np.sin(np.deg2rad(yaw) / 2)], atol=1e-12)
