"""Aggregated rigid-body equations of motion for a point-mass formation.

The integration state is the formation centre of mass (inertial), the
attitude quaternion, the body rate and every agent's CM-relative position and
velocity expressed in the body frame.  Body-frame derivatives of relative
quantities are taken *in* the rotating frame (transport theorem), so a
perfectly rigid formation has ``rel_vel_b == 0``.

The body rate of a deforming formation is not unique.  ``rotational_dynamics``
picks the rate that keeps the relative angular momentum
``sum m_i dr_i x d(dr_i)/dt`` constant in the body frame; starting from the
least-squares rigid-rate fit (where it is zero) the frame then follows the
mean rotation of the agents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ParticleSystem
from .errors import IllConditionedFrame, SingularInertia
from .rotation import cross, dcm_from_quat, skew, omega_matrix, quat_from_dcm

INERTIA_NULL_RTOL = 1e-9
MIN_FRAME_ANGLE = np.deg2rad(1.0)


@dataclass
class VrbState:
    r_cm: np.ndarray
    v_cm: np.ndarray
    q: np.ndarray
    omega_b: np.ndarray
    rel_pos_b: np.ndarray
    rel_vel_b: np.ndarray

    @property
    def n_agents(self) -> int:
        return len(self.rel_pos_b)

    @property
    def dcm(self) -> np.ndarray:
        """Inertial-to-body DCM."""
        return dcm_from_quat(self.q)

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.r_cm, self.v_cm, self.q, self.omega_b, self.rel_pos_b.ravel(), self.rel_vel_b.ravel()]
        )

    @classmethod
    def unpack(cls, x: np.ndarray, n_agents: int) -> "VrbState":
        k = 13 + 3 * n_agents
        return cls(
            r_cm=x[0:3],
            v_cm=x[3:6],
            q=x[6:10],
            omega_b=x[10:13],
            rel_pos_b=x[13:k].reshape(n_agents, 3),
            rel_vel_b=x[k : k + 3 * n_agents].reshape(n_agents, 3),
        )

    def copy(self) -> "VrbState":
        return VrbState.unpack(self.pack().copy(), self.n_agents)


@dataclass
class InertiaTensor:
    I_cm_b: np.ndarray
    I_dot_cm_b: np.ndarray


@dataclass(frozen=True)
class FrameSpec:
    """Body frame seeds: ``x_axis_agent`` points x from the CM; the vector
    from ``y_axis_pair[0]`` to ``y_axis_pair[1]`` seeds y."""

    x_axis_agent: int
    y_axis_pair: tuple[int, int]


def attach_body_frame(sys: ParticleSystem, spec: FrameSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dcm, q0)``: inertial-to-body DCM and its quaternion."""
    r = sys.positions
    a, b = spec.y_axis_pair
    if spec.x_axis_agent in (a, b):
        raise IllConditionedFrame("x-axis agent must not be part of the y-axis pair")
    x_seed = r[spec.x_axis_agent] - sys.center_of_mass
    y_seed = r[b] - r[a]
    nx, ny = np.linalg.norm(x_seed), np.linalg.norm(y_seed)
    if nx < 1e-9 or ny < 1e-9:
        raise IllConditionedFrame("frame seed vector has (near) zero length")
    x_hat = x_seed / nx
    y_perp = y_seed - (y_seed @ x_hat) * x_hat
    if np.linalg.norm(y_perp) < np.sin(MIN_FRAME_ANGLE) * ny:
        raise IllConditionedFrame("x and y frame seeds are within 1 degree of parallel")
    y_hat = y_perp / np.linalg.norm(y_perp)
    z_hat = cross(x_hat, y_hat)
    dcm = np.vstack([x_hat, y_hat, z_hat])
    return dcm, quat_from_dcm(dcm)


def fit_body_rate(rel_pos: np.ndarray, rel_vel: np.ndarray, masses: np.ndarray) -> np.ndarray:
    """Mass-weighted least-squares rigid rate ``argmin sum m |dv - w x dr|^2``.

    Vectors may be in any single frame; the result is in the same frame.
    A collinear formation leaves the spin about its axis at zero.
    """
    I = inertia(rel_pos, np.zeros_like(rel_pos), masses).I_cm_b
    h = np.sum(masses[:, None] * cross(rel_pos, rel_vel), axis=0)
    return np.linalg.lstsq(I, h, rcond=INERTIA_NULL_RTOL)[0] if np.any(I) else np.zeros(3)


def vrb_from_particles(sys: ParticleSystem, dcm: np.ndarray) -> VrbState:
    """Convert absolute agent states to a VrbState for a given attitude."""
    r_cm, v_cm = sys.center_of_mass, sys.cm_velocity
    dr_i = sys.positions - r_cm
    dv_i = sys.velocities - v_cm
    w_i = fit_body_rate(dr_i, dv_i, sys.masses)
    rel_pos_b = dr_i @ dcm.T
    rel_vel_b = (dv_i - cross(w_i, dr_i)) @ dcm.T
    return VrbState(
        r_cm=r_cm.copy(),
        v_cm=v_cm.copy(),
        q=quat_from_dcm(dcm),
        omega_b=dcm @ w_i,
        rel_pos_b=rel_pos_b,
        rel_vel_b=rel_vel_b,
    )


def particles_from_vrb(state: VrbState, dcm: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Inertial agent positions and velocities, each ``(N, 3)``."""
    T = state.dcm if dcm is None else dcm
    pos = state.r_cm + state.rel_pos_b @ T
    return pos, translational_kinematics(state, T)


def translational_kinematics(state: VrbState, dcm: np.ndarray | None = None) -> np.ndarray:
    """Inertial agent velocities ``v_cm + T^T (d_dot + w x d)``."""
    T = state.dcm if dcm is None else dcm
    rel = state.rel_vel_b + state.rel_pos_b @ skew(state.omega_b).T
    return state.v_cm + rel @ T


def inertia(rel_pos_b: np.ndarray, rel_vel_b: np.ndarray, masses: np.ndarray) -> InertiaTensor:
    """Inertia about the CM and its body-frame rate of change."""
    m = np.asarray(masses, dtype=float)
    r = np.asarray(rel_pos_b, dtype=float)
    v = np.asarray(rel_vel_b, dtype=float)
    mr = m[:, None] * r
    S = r.T @ mr
    P = v.T @ mr
    I = np.trace(S) * np.eye(3) - S
    I_dot = 2.0 * np.trace(P) * np.eye(3) - P - P.T
    return InertiaTensor(I, I_dot)


def relative_momentum(state: VrbState, masses: np.ndarray) -> np.ndarray:
    return np.sum(masses[:, None] * cross(state.rel_pos_b, state.rel_vel_b), axis=0)


def angular_momentum(state: VrbState, masses: np.ndarray, I: InertiaTensor | None = None) -> np.ndarray:
    """Angular momentum about the CM, body frame."""
    if I is None:
        I = inertia(state.rel_pos_b, state.rel_vel_b, masses)
    return relative_momentum(state, masses) + I.I_cm_b @ state.omega_b


def _solve_inertia(I: np.ndarray, rhs: np.ndarray, allow_singular: bool) -> np.ndarray:
    evals, evecs = np.linalg.eigh(I)
    top = evals.max()
    keep = evals > INERTIA_NULL_RTOL * top if top > 0 else np.zeros(3, dtype=bool)
    if not allow_singular and not keep.all():
        raise SingularInertia("inertia tensor is singular (collinear or single-agent formation)")
    inv = np.zeros(3)
    inv[keep] = 1.0 / evals[keep]
    # components along null principal axes get zero acceleration
    return evecs @ (inv * (evecs.T @ rhs))


def rotational_dynamics(
    state: VrbState,
    I: InertiaTensor,
    forces_b: np.ndarray,
    masses: np.ndarray,
    rel_acc_b: np.ndarray | None = None,
    allow_singular: bool = True,
) -> np.ndarray:
    """Body angular acceleration.

    ``forces_b`` are total agent forces in the body frame.  ``rel_acc_b``, if
    given, adds the explicit ``-sum dr x m d_ddot`` term; with the rate
    convention used here that term is zero for the accelerations returned by
    ``translational_dynamics``.
    """
    w = state.omega_b
    r = state.rel_pos_b
    mr = masses[:, None] * r
    tau = np.sum(cross(r, forces_b), axis=0)
    # sum dr x m(w x dv) + sum (w x dr) x m dv == w x h_rel (Jacobi identity)
    h_rel = np.sum(cross(mr, state.rel_vel_b), axis=0)
    Iw = I.I_cm_b @ w
    rhs = tau - cross(w, Iw) - I.I_dot_cm_b @ w - cross(w, h_rel)
    if rel_acc_b is not None:
        rhs = rhs - np.sum(cross(mr, rel_acc_b), axis=0)
    return _solve_inertia(I.I_cm_b, rhs, allow_singular)


def translational_dynamics(
    state: VrbState,
    forces_i: np.ndarray,
    masses: np.ndarray,
    omega_dot_b: np.ndarray,
    f_cm_total: np.ndarray | None = None,
    dcm: np.ndarray | None = None,
) -> np.ndarray:
    """Body-frame relative accelerations of every agent, ``(N, 3)``.

    ``forces_i`` are total inertial agent forces.
    """
    T = state.dcm if dcm is None else dcm
    if f_cm_total is None:
        f_cm_total = forces_i.sum(axis=0)
    w = state.omega_b
    r = state.rel_pos_b
    v = state.rel_vel_b
    specific = forces_i / masses[:, None] - f_cm_total / masses.sum()
    W = skew(w)
    # row-vector form: (a x b_i) for all i is b @ skew(a).T
    return -(2.0 * v + r @ W.T) @ W.T - r @ skew(omega_dot_b).T + specific @ T.T


def quaternion_kinematics(q: np.ndarray, omega_b: np.ndarray) -> np.ndarray:
    return 0.5 * omega_matrix(omega_b) @ q


def step_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def vrb_derivative(
    state: VrbState, forces_i: np.ndarray, masses: np.ndarray, dcm: np.ndarray | None = None
) -> np.ndarray:
    """Packed time derivative of a VrbState under inertial agent forces.

    Angular acceleration is evaluated first, then the relative
    accelerations with that rate.
    """
    T = state.dcm if dcm is None else dcm
    F = forces_i.sum(axis=0)
    forces_b = forces_i @ T.T
    I = inertia(state.rel_pos_b, state.rel_vel_b, masses)
    w_dot = rotational_dynamics(state, I, forces_b, masses)
    rel_acc = translational_dynamics(state, forces_i, masses, w_dot, F, T)
    return np.concatenate(
        [
            state.v_cm,
            F / masses.sum(),
            quaternion_kinematics(state.q, state.omega_b),
            w_dot,
            state.rel_vel_b.ravel(),
            rel_acc.ravel(),
        ]
    )
