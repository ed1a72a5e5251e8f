import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vrbsim.rotation import (
    cross,
    dcm_from_quat,
    euler321_from_quat,
    omega_matrix,
    quat_conjugate,
    quat_from_dcm,
    quat_from_euler321,
    quat_multiply,
    rotation_vector,
    skew,
)

finite = st.floats(-10, 10, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)
quats = arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 0.1)


class TestCross:
    @given(vec3, vec3)
    def test_matches_numpy(self, a, b):
        np.testing.assert_allclose(cross(a, b), np.cross(a, b), atol=1e-12)

    def test_broadcasts_rows(self):
        a = np.arange(12.0).reshape(4, 3)
        b = np.array([0.0, 0.0, 1.0])
        np.testing.assert_allclose(cross(a, b), np.cross(a, b))

    @given(vec3, vec3)
    def test_skew_matrix(self, a, b):
        np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-12)


class TestQuaternions:
    @given(quats)
    def test_dcm_round_trip(self, q):
        q = q / np.linalg.norm(q)
        back = quat_from_dcm(dcm_from_quat(q))
        # q and -q are the same attitude
        assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9

    @given(quats)
    def test_dcm_is_orthonormal(self, q):
        C = dcm_from_quat(q)
        np.testing.assert_allclose(C @ C.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(C) > 0

    def test_yaw_rotation_maps_inertial_x_to_body(self):
        q = quat_from_euler321(np.deg2rad([0, 0, 90]))
        np.testing.assert_allclose(q, [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)], atol=1e-15)
        # inertial-to-body: inertial +y is body +x after a +90 deg yaw
        np.testing.assert_allclose(dcm_from_quat(q) @ [0, 1, 0], [1, 0, 0], atol=1e-15)

    @given(
        st.floats(-170, 170),
        st.floats(-80, 80),
        st.floats(-179, 179),
    )
    def test_euler_round_trip(self, roll, pitch, yaw):
        sigma = np.deg2rad([roll, pitch, yaw])
        np.testing.assert_allclose(euler321_from_quat(quat_from_euler321(sigma)), sigma, atol=1e-9)

    def test_product_with_conjugate_is_identity(self):
        q = quat_from_euler321([0.3, -0.2, 1.1])
        np.testing.assert_allclose(quat_multiply(q, quat_conjugate(q)), [1, 0, 0, 0], atol=1e-15)

    def test_omega_matrix_pattern(self):
        W = omega_matrix(np.array([1.0, 2.0, 3.0]))
        assert np.allclose(W, -W.T)
        np.testing.assert_allclose(W[3], [3, 2, -1, 0])

    def test_rotation_vector_short_way(self):
        q = quat_from_euler321(np.deg2rad([0, 0, 30]))
        np.testing.assert_allclose(rotation_vector(q), [0, 0, np.deg2rad(30)], atol=1e-15)
        np.testing.assert_allclose(rotation_vector(-q), [0, 0, np.deg2rad(30)], atol=1e-15)

    @settings(max_examples=50)
    @given(quats)
    def test_rotation_vector_rebuilds_quaternion(self, q):
        q = q / np.linalg.norm(q)
        phi = rotation_vector(q)
        ang = np.linalg.norm(phi)
        rebuilt = np.concatenate([[np.cos(ang / 2)], np.sinc(ang / (2 * np.pi)) * phi / 2])
        assert min(np.abs(rebuilt - q).max(), np.abs(rebuilt + q).max()) < 1e-9
