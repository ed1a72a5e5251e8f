"""Quaternion and direction-cosine helpers.

Quaternions are scalar-first ``[q0, q1, q2, q3]``.  The attitude quaternion
``q`` of a formation is propagated with ``q_dot = 0.5 * Omega(w) q`` and the
inertial-to-body DCM is ``dcm_from_quat(q)``.  Euler angles are 3-2-1
(yaw, pitch, roll) and are always reported as ``[roll, pitch, yaw]``.
"""

from __future__ import annotations

import numpy as np


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product over the last axis (broadcasting); much cheaper than
    ``np.cross`` for the small arrays used in the equations of motion."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(np.shape(a), np.shape(b)))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix, ``skew(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product ``a * b``."""
    a0, av = a[0], a[1:]
    b0, bv = b[0], b[1:]
    out = np.empty(4)
    out[0] = a0 * b0 - av @ bv
    out[1:] = a0 * bv + b0 * av + np.cross(av, bv)
    return out


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def omega_matrix(omega_b: np.ndarray) -> np.ndarray:
    """4x4 rate matrix of ``q_dot = 0.5 * Omega q`` for body rates [p, q, r]."""
    p, q, r = omega_b
    return np.array(
        [
            [0.0, -p, -q, -r],
            [p, 0.0, r, -q],
            [q, -r, 0.0, p],
            [r, q, -p, 0.0],
        ]
    )


def dcm_from_quat(q: np.ndarray) -> np.ndarray:
    """Inertial-to-body direction cosine matrix of an attitude quaternion."""
    q0, q1, q2, q3 = q / np.linalg.norm(q)
    return np.array(
        [
            [q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3, 2 * (q1 * q2 + q0 * q3), 2 * (q1 * q3 - q0 * q2)],
            [2 * (q1 * q2 - q0 * q3), q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3, 2 * (q2 * q3 + q0 * q1)],
            [2 * (q1 * q3 + q0 * q2), 2 * (q2 * q3 - q0 * q1), q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3],
        ]
    )


def quat_from_dcm(C: np.ndarray) -> np.ndarray:
    """Quaternion of an inertial-to-body DCM (Shepperd's largest-pivot method).

    The returned quaternion has a non-negative scalar part.
    """
    tr = np.trace(C)
    # squared magnitudes (times 4) of q0..q3; pick the largest as pivot
    cands = np.array([1.0 + tr, 1.0 + 2 * C[0, 0] - tr, 1.0 + 2 * C[1, 1] - tr, 1.0 + 2 * C[2, 2] - tr])
    k = int(np.argmax(cands))
    s = 2.0 * np.sqrt(cands[k])
    if k == 0:
        q = [0.25 * s, (C[1, 2] - C[2, 1]) / s, (C[2, 0] - C[0, 2]) / s, (C[0, 1] - C[1, 0]) / s]
    elif k == 1:
        q = [(C[1, 2] - C[2, 1]) / s, 0.25 * s, (C[0, 1] + C[1, 0]) / s, (C[2, 0] + C[0, 2]) / s]
    elif k == 2:
        q = [(C[2, 0] - C[0, 2]) / s, (C[0, 1] + C[1, 0]) / s, 0.25 * s, (C[1, 2] + C[2, 1]) / s]
    else:
        q = [(C[0, 1] - C[1, 0]) / s, (C[2, 0] + C[0, 2]) / s, (C[1, 2] + C[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def euler321_from_quat(q: np.ndarray) -> np.ndarray:
    """``[roll, pitch, yaw]`` in radians."""
    q0, q1, q2, q3 = q / np.linalg.norm(q)
    roll = np.arctan2(2 * (q2 * q3 + q0 * q1), q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3)
    pitch = np.arcsin(np.clip(-2 * (q1 * q3 - q0 * q2), -1.0, 1.0))
    yaw = np.arctan2(2 * (q1 * q2 + q0 * q3), q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3)
    return np.array([roll, pitch, yaw])


def quat_from_euler321(sigma: np.ndarray) -> np.ndarray:
    """Quaternion from ``[roll, pitch, yaw]`` in radians."""
    roll, pitch, yaw = sigma
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )


def rotation_vector(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle, radians) of a quaternion, shortest way round."""
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-15:
        return 2.0 * v
    return 2.0 * np.arctan2(s, q[0]) * v / s


def quat_from_rotation_vector(phi: np.ndarray) -> np.ndarray:
    """Inverse of ``rotation_vector``."""
    angle = np.linalg.norm(phi)
    # sinc keeps the small-angle limit exact
    return np.concatenate([[np.cos(angle / 2)], 0.5 * np.sinc(angle / (2 * np.pi)) * phi])
