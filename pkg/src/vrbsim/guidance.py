"""LQR guidance: Riccati solver, waypoint wrench law and per-agent trackers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .allocation import WrenchCommand
from .dynamics import InertiaTensor, VrbState
from .errors import IllConditioned, NotStabilizable, StaleGains
from .rotation import (
    cross,
    dcm_from_quat,
    quat_conjugate,
    quat_from_euler321,
    quat_from_rotation_vector,
    quat_multiply,
    rotation_vector,
)

HURWITZ_MARGIN = -1e-6
LOCAL_MAX_ATT_STEP = np.deg2rad(45.0)
STOP = "stop"
FLY_THROUGH = "fly_through"


@dataclass
class CareSolution:
    P: np.ndarray
    K: np.ndarray
    residual: float


def care_residual(A, B, Q, R, P) -> float:
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.abs(res).max())


def solve_care(A, B, Q, R, refine: int = 4) -> CareSolution:
    """Stabilizing solution of ``A'P + PA - PBR^-1B'P + Q = 0``.

    The stable invariant subspace of the Hamiltonian matrix gives a first
    solution, which is then polished with Kleinman-Newton iterations.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    # PBH test: every mode that is not strictly stable must be reachable by B
    for lam in np.linalg.eigvals(A):
        if lam.real >= 0:
            sv = np.linalg.svd(np.hstack([A - lam * np.eye(n), B]), compute_uv=False)
            if sv[-1] < 1e-10 * max(1.0, sv[0]):
                raise NotStabilizable(f"mode {lam:.3g} cannot be influenced by the input")
    G = B @ np.linalg.solve(R, B.T)
    ham = np.block([[A, -G], [-Q, -A.T]])
    T, Z, sdim = scipy.linalg.schur(ham, output="real", sort="lhp")
    eig = np.linalg.eigvals(ham)
    if sdim != n or np.min(np.abs(eig.real)) < 1e-12 * max(1.0, np.abs(eig).max()):
        raise NotStabilizable("Hamiltonian has eigenvalues on the imaginary axis")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise IllConditioned("stable subspace basis is nearly singular")
    P = np.linalg.solve(U11.T, U21.T).T
    P = 0.5 * (P + P.T)
    for _ in range(refine):
        K = np.linalg.solve(R, B.T @ P)
        Acl = A - B @ K
        if np.max(np.linalg.eigvals(Acl).real) >= 0:
            break
        P_new = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        P_new = 0.5 * (P_new + P_new.T)
        if care_residual(A, B, Q, R, P_new) > care_residual(A, B, Q, R, P):
            break
        P = P_new
    K = np.linalg.solve(R, B.T @ P)
    if np.max(np.linalg.eigvals(A - B @ K).real) >= HURWITZ_MARGIN:
        raise NotStabilizable("no stabilizing gain (closed loop not Hurwitz)")
    return CareSolution(P=P, K=K, residual=care_residual(A, B, Q, R, P))


DOUBLE_INTEGRATOR = np.array([[0.0, 1.0], [0.0, 0.0]])


def double_integrator_gain(q_pos: float, q_vel: float, r: float, inertia_like: float) -> CareSolution:
    """LQR for ``inertia_like * x_ddot = u`` with state ``(x, x_dot)``."""
    B = np.array([[0.0], [1.0 / inertia_like]])
    return solve_care(DOUBLE_INTEGRATOR, B, np.diag([q_pos, q_vel]), np.array([[r]]))


@dataclass
class Waypoint:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude_deg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rates_deg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    hold: str = STOP

    def __post_init__(self):
        for name in ("position", "velocity", "attitude_deg", "rates_deg"):
            value = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(value)):
                raise ValueError(f"waypoint {name} must be finite")
            setattr(self, name, value)
        if self.hold not in (STOP, FLY_THROUGH):
            raise ValueError(f"waypoint hold must be {STOP!r} or {FLY_THROUGH!r}")
        if self.hold == FLY_THROUGH and not np.any(self.velocity):
            raise ValueError("fly_through waypoints need a non-zero velocity")

    @property
    def quaternion(self) -> np.ndarray:
        return quat_from_euler321(np.deg2rad(self.attitude_deg))

    @property
    def omega_des(self) -> np.ndarray:
        return np.deg2rad(self.rates_deg)


@dataclass
class LqrDesign:
    """Gains for one control channel.

    Translation: ``K`` is ``1 x 2`` and acts on each inertial axis.
    Attitude: ``K`` is ``3 x 6`` on ``(2 q_err_vec, w - w_des)``; principal
    axes whose inertia is below ``axis_rtol`` of the largest get no gain and
    are listed in ``free_axes`` (columns, body frame).
    """

    Q: np.ndarray
    R: float
    K: np.ndarray
    residual: float
    max_real_eig: float
    inertia: np.ndarray | None = None
    free_axes: np.ndarray = field(default_factory=lambda: np.zeros((3, 0)))


def design_translation(total_mass: float, Q=(2.0, 4.0), R: float = 1.0) -> LqrDesign:
    sol = double_integrator_gain(Q[0], Q[1], R, total_mass)
    B = np.array([[0.0], [1.0 / total_mass]])
    eig = np.linalg.eigvals(DOUBLE_INTEGRATOR - B @ sol.K)
    return LqrDesign(np.asarray(Q, float), R, sol.K, sol.residual, float(eig.real.max()))


def design_attitude(I_cm_b: np.ndarray, Q=(20.0, 5.0), R: float = 1.0, axis_rtol: float = 0.01) -> LqrDesign:
    """Attitude gains from the linearized model ``I w_dot = tau``.

    With isotropic weights the six-state problem separates along the
    principal axes, so it is solved as three scalar double integrators.
    """
    evals, V = np.linalg.eigh(I_cm_b)
    top = max(evals.max(), 0.0)
    k_e = np.zeros(3)
    k_w = np.zeros(3)
    residual = 0.0
    max_real = -np.inf
    controlled = np.zeros(3, dtype=bool)
    for k, J in enumerate(evals):
        if top <= 0 or J < axis_rtol * top:
            continue
        sol = double_integrator_gain(Q[0], Q[1], R, J)
        k_e[k], k_w[k] = sol.K[0]
        residual = max(residual, sol.residual)
        B = np.array([[0.0], [1.0 / J]])
        max_real = max(max_real, float(np.linalg.eigvals(DOUBLE_INTEGRATOR - B @ sol.K).real.max()))
        controlled[k] = True
    K = np.hstack([V @ np.diag(k_e) @ V.T, V @ np.diag(k_w) @ V.T])
    return LqrDesign(
        np.asarray(Q, float),
        R,
        K,
        residual,
        max_real if controlled.any() else -np.inf,
        inertia=np.array(I_cm_b, dtype=float),
        free_axes=V[:, ~controlled],
    )


def inertia_drift(design: LqrDesign, I_cm_b: np.ndarray, axis_rtol: float = 0.01) -> float:
    """Largest relative inertia change seen by the attitude design.

    The whole-tensor change alone hides a small principal moment collapsing
    (triangle to line), so every controlled design axis is also compared on
    its own, and an uncontrolled axis that has grown past ``axis_rtol``
    counts as infinite drift.
    """
    norm = np.linalg.norm(I_cm_b)
    if norm == 0:
        return 0.0 if not np.any(design.inertia) else np.inf
    drift = float(np.linalg.norm(I_cm_b - design.inertia) / norm)
    evals, V = np.linalg.eigh(design.inertia)
    now = np.einsum("ji,jk,ki->i", V, I_cm_b, V)
    top = max(np.linalg.eigvalsh(I_cm_b).max(), 0.0)
    free = np.ones(3, dtype=bool)
    if design.free_axes.size:
        free = np.abs(V.T @ design.free_axes).max(axis=1) > 0.5
    else:
        free[:] = False
    for k in range(3):
        if free[k]:
            if now[k] >= axis_rtol * top:
                return np.inf
        elif evals[k] > 0:
            drift = max(drift, abs(now[k] - evals[k]) / evals[k])
    return drift


@dataclass
class GuidanceDesign:
    translation: LqrDesign
    attitude: LqrDesign
    total_mass: float
    gravity: float = 9.81
    reschedule_threshold: float = 0.05
    attitude_Q: tuple = (20.0, 5.0)
    attitude_R: float = 1.0
    axis_rtol: float = 0.01

    def needs_resolve(self, I_cm_b: np.ndarray) -> bool:
        return inertia_drift(self.attitude, I_cm_b, self.axis_rtol) > self.reschedule_threshold

    def resolve_attitude(self, I_cm_b: np.ndarray) -> None:
        self.attitude = design_attitude(I_cm_b, self.attitude_Q, self.attitude_R, self.axis_rtol)


def make_design(
    total_mass: float,
    I_cm_b: np.ndarray,
    translation_Q=(2.0, 4.0),
    translation_R: float = 1.0,
    attitude_Q=(20.0, 5.0),
    attitude_R: float = 1.0,
    gravity: float = 9.81,
    reschedule_threshold: float = 0.05,
    axis_rtol: float = 0.01,
) -> GuidanceDesign:
    return GuidanceDesign(
        translation=design_translation(total_mass, translation_Q, translation_R),
        attitude=design_attitude(I_cm_b, attitude_Q, attitude_R, axis_rtol),
        total_mass=total_mass,
        gravity=gravity,
        reschedule_threshold=reschedule_threshold,
        attitude_Q=tuple(attitude_Q),
        attitude_R=attitude_R,
        axis_rtol=axis_rtol,
    )


def attitude_error(q: np.ndarray, q_des: np.ndarray) -> np.ndarray:
    """``2 * vec(q_err)`` with ``q_err = conj(q_des) * q`` on the short way round."""
    q_err = quat_multiply(quat_conjugate(q_des), q)
    if q_err[0] < 0:
        q_err = -q_err
    return 2.0 * q_err[1:]


def attitude_error_angle(q: np.ndarray, q_des: np.ndarray, free_axes: np.ndarray | None = None) -> float:
    """Attitude error in radians, ignoring rotation about uncontrolled axes."""
    phi = rotation_vector(quat_multiply(quat_conjugate(q_des), q))
    if free_axes is not None and free_axes.size:
        phi = phi - free_axes @ (free_axes.T @ phi)
    return float(np.linalg.norm(phi))


def wrench_command(state: VrbState, I: InertiaTensor, wp: Waypoint, design: GuidanceDesign) -> WrenchCommand:
    """Body-frame CM force and torque that drive the formation to ``wp``."""
    if design.needs_resolve(I.I_cm_b):
        raise StaleGains(
            f"inertia moved {inertia_drift(design.attitude, I.I_cm_b, design.axis_rtol):.1%} "
            "since the attitude gains were solved"
        )
    kt = design.translation.K[0]
    f_I = -kt[0] * (state.r_cm - wp.position) - kt[1] * (state.v_cm - wp.velocity)
    f_I[2] += design.total_mass * design.gravity
    T = dcm_from_quat(state.q)
    x_att = np.concatenate([attitude_error(state.q, wp.quaternion), state.omega_b - wp.omega_des])
    tau = -design.attitude.K @ x_att
    return WrenchCommand(T @ f_I, tau)


def reference_attitude(q: np.ndarray, q_des: np.ndarray, max_angle: float = LOCAL_MAX_ATT_STEP) -> np.ndarray:
    """``q_des``, or the point ``max_angle`` along the geodesic from ``q`` towards it.

    Per-agent position servos pulling a planar formation straight to an
    attitude 180 degrees away cancel each other's torque; a reference that
    is never more than ``max_angle`` ahead always leaves a net turning pull.
    """
    phi = rotation_vector(quat_multiply(quat_conjugate(q), q_des))
    angle = np.linalg.norm(phi)
    if angle <= max_angle:
        return q_des
    return quat_multiply(q, quat_from_rotation_vector(phi * (max_angle / angle)))


def desired_agent_states(
    wp: Waypoint, rel_pos_b: np.ndarray, q_ref: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Agent positions/velocities implied by the waypoint's rigid-body motion.

    ``q_ref`` overrides the waypoint attitude (see ``reference_attitude``).
    """
    C = dcm_from_quat(wp.quaternion if q_ref is None else q_ref)
    pos = wp.position + rel_pos_b @ C
    vel = wp.velocity + cross(wp.omega_des, rel_pos_b) @ C
    return pos, vel


def local_gains(masses: np.ndarray, Q=(2.0, 4.0), R: float = 1.0) -> np.ndarray:
    """Per-agent ``(N, 2)`` double-integrator gains."""
    cache: dict[float, np.ndarray] = {}
    out = np.empty((len(masses), 2))
    for i, m in enumerate(masses):
        m = float(m)
        if m not in cache:
            cache[m] = double_integrator_gain(Q[0], Q[1], R, m).K[0]
        out[i] = cache[m]
    return out


def local_agent_control(
    positions: np.ndarray,
    velocities: np.ndarray,
    pos_des: np.ndarray,
    vel_des: np.ndarray,
    masses: np.ndarray,
    gains: np.ndarray,
    gravity: float = 9.81,
) -> np.ndarray:
    """Inertial per-agent LQR forces with gravity feed-forward."""
    f = -gains[:, :1] * (positions - pos_des) - gains[:, 1:] * (velocities - vel_des)
    f[:, 2] += masses * gravity
    return f
