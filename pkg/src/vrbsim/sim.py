"""Mission orchestration: RK4 stepping, phase machine, logging and audits.

A mission starts in ``establishing``: agents are integrated in absolute
coordinates under gravity, the open-loop establishment input and the
constraint force.  Once every constraint has stayed inside
``establish_tol`` for ``establish_hold`` seconds the body frame is attached
and the formation is integrated with the aggregated rigid-body equations
(``tracking``).  A change of desired distances while tracking switches to
``reconfiguring`` until the constraints settle again; waypoint advancement
is suspended meanwhile.

Control forces are held constant over each step; the constraint force is
re-evaluated at every RK4 stage; the constraint integral advances once per
step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import allocation
from .constraints import (
    ConstraintSet,
    ParticleSystem,
    constraint_jacobian,
    stabilized_force,
)
from .dynamics import (
    VrbState,
    attach_body_frame,
    inertia,
    particles_from_vrb,
    vrb_derivative,
    vrb_from_particles,
)
from .errors import NumericalDivergence
from .guidance import (
    FLY_THROUGH,
    GuidanceDesign,
    attitude_error_angle,
    desired_agent_states,
    local_agent_control,
    local_gains,
    make_design,
    reference_attitude,
    wrench_command,
)
from .rotation import cross, euler321_from_quat

if TYPE_CHECKING:
    from .scenario import Scenario

ESTABLISHING = "establishing"
TRACKING = "tracking"
RECONFIGURING = "reconfiguring"
PHASE_CODES = {ESTABLISHING: 0, TRACKING: 1, RECONFIGURING: 2}

THRUST_BUDGET = 23.6


@dataclass
class SimConfig:
    dt: float = 0.01
    t_end: float = 20.0
    establish_tol: float = 0.05
    establish_hold: float = 1.0
    wp_pos_tol: float = 0.1
    wp_vel_tol: float = 0.05
    wp_att_tol: float = 1.0
    wp_rate_tol: float = 0.5
    flythrough_radius: float = 0.5
    ground_clamp: bool = False
    divergence_limit: float = 1e6

    def __post_init__(self):
        from .errors import ValidationError

        if self.dt <= 0:
            raise ValidationError("dt must be positive", "sim.dt")
        if self.t_end < 0:
            raise ValidationError("t_end must be non-negative", "sim.t_end")
        for name in (
            "establish_tol",
            "establish_hold",
            "wp_pos_tol",
            "wp_vel_tol",
            "wp_att_tol",
            "wp_rate_tol",
            "flythrough_radius",
        ):
            if getattr(self, name) <= 0:
                raise ValidationError("tolerance must be positive", f"sim.{name}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class MissionPhase:
    kind: str
    entered_at: float
    waypoint: int | None = None
    schedule_id: int | None = None


@dataclass
class SimLog:
    """Uniform-grid record of a mission.

    Per-step arrays are indexed by grid point ``k`` (time ``t[k]``) and hold
    the state at that instant and the forces applied over the following
    step.  Attitude channels are NaN before the body frame is attached.
    """

    t: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    f_ext: np.ndarray
    f_u: np.ndarray
    f_c: np.ndarray
    c: np.ndarray
    d_des: np.ndarray
    r_cm: np.ndarray
    v_cm: np.ndarray
    q: np.ndarray
    euler_deg: np.ndarray
    omega_b: np.ndarray
    phase: np.ndarray
    waypoint: np.ndarray
    wrench_cmd: np.ndarray
    wrench_achieved: np.ndarray
    q_norm_drift: np.ndarray
    cm_residual: np.ndarray
    masses: np.ndarray
    pairs: np.ndarray
    events: list = field(default_factory=list)
    waypoints_reached: list = field(default_factory=list)
    complete: bool = False
    t_complete: float | None = None
    timed_out: bool = False
    established_at: float | None = None
    gain_solves: int = 0
    designs: list = field(default_factory=list)

    @property
    def n_agents(self) -> int:
        return len(self.masses)

    def truncate(self, n: int) -> None:
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray) and name not in ("masses", "pairs"):
                setattr(self, name, value[:n])


def _empty_log(n_points: int, masses: np.ndarray, pairs: np.ndarray) -> SimLog:
    n = len(masses)
    m = len(pairs)

    def z(*shape):
        return np.full((n_points, *shape), np.nan)

    return SimLog(
        t=np.zeros(n_points),
        positions=z(n, 3),
        velocities=z(n, 3),
        f_ext=z(n, 3),
        f_u=z(n, 3),
        f_c=z(n, 3),
        c=z(m),
        d_des=z(m),
        r_cm=z(3),
        v_cm=z(3),
        q=z(4),
        euler_deg=z(3),
        omega_b=z(3),
        phase=np.zeros(n_points, dtype=int),
        waypoint=np.full(n_points, -1, dtype=int),
        wrench_cmd=z(6),
        wrench_achieved=z(6),
        q_norm_drift=np.zeros(n_points),
        cm_residual=np.zeros(n_points),
        masses=masses.copy(),
        pairs=pairs.copy(),
    )


def rk4(f, x: np.ndarray, dt: float, k1: np.ndarray | None = None) -> np.ndarray:
    if k1 is None:
        k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


class Mission:
    """Stateful runner for one scenario; ``step()`` advances one ``dt``."""

    def __init__(self, scenario: "Scenario"):
        self.scenario = scenario
        self.cfg: SimConfig = scenario.sim
        self.masses = np.asarray(scenario.masses, dtype=float)
        self.n = len(self.masses)
        self.cs: ConstraintSet = scenario.constraint_set()
        self.g_vec = np.array([0.0, 0.0, -scenario.gravity])
        self.f_gravity = self.masses[:, None] * self.g_vec
        self.f_establish = scenario.establish_forces()
        self.waypoints = list(scenario.waypoints)
        self.pending_phases = [p for p in scenario.schedule if p.at_waypoint is not None]

        self.t = 0.0
        self.k = 0
        self.abs_state = np.concatenate(
            [np.asarray(scenario.positions, float).ravel(), np.asarray(scenario.velocities, float).ravel()]
        )
        self.vrb: VrbState | None = None
        self.phase = MissionPhase(ESTABLISHING, 0.0)
        self.wp_index = 0 if self.waypoints else None
        self.wp_done = False
        self.settle_since: float | None = None
        self.design: GuidanceDesign | None = None
        self.local_K = None
        self.q_drift = 0.0
        self.log = _empty_log(self.cfg.n_steps + 1, self.masses, self.cs.pairs)
        self._desired = self.cs.sync_targets(0.0)

    # state access ---------------------------------------------------------
    def particles(self) -> tuple[np.ndarray, np.ndarray]:
        if self.vrb is None:
            x = self.abs_state
            return x[: 3 * self.n].reshape(self.n, 3), x[3 * self.n :].reshape(self.n, 3)
        return particles_from_vrb(self.vrb)

    def _constraint(self, pos, vel, f_e):
        return stabilized_force(
            self.masses, pos, vel, f_e, self.cs.pairs, self._desired, self.cs.integral, self.cs.gains, self.cs.damping
        )

    # phase machine ----------------------------------------------------------
    def _event(self, text: str) -> None:
        self.log.events.append((round(self.t, 10), text))

    def _settled(self, c: np.ndarray) -> bool:
        if len(c) == 0 or np.max(np.abs(c)) < self.cfg.establish_tol:
            if self.settle_since is None:
                self.settle_since = self.t
            return self.t - self.settle_since >= self.cfg.establish_hold - 1e-9
        self.settle_since = None
        return False

    def _attach(self) -> None:
        self.log.established_at = self.t
        if self.scenario.frame.x_axis_agent < 0 or not self.waypoints:
            # establishment-only run (or fewer than three agents): no body
            # frame is needed, so integration stays in absolute coordinates
            self._event("formation established")
            self.phase = MissionPhase(TRACKING, self.t, self.wp_index)
            return
        pos, vel = self.particles()
        sys = ParticleSystem(self.masses, pos, vel)
        dcm, _ = attach_body_frame(sys, self.scenario.frame)
        self.vrb = vrb_from_particles(sys, dcm)
        I = inertia(self.vrb.rel_pos_b, self.vrb.rel_vel_b, self.masses).I_cm_b
        ctl = self.scenario.control
        self.design = make_design(
            self.masses.sum(),
            I,
            ctl.translation_Q,
            ctl.translation_R,
            ctl.attitude_Q,
            ctl.attitude_R,
            self.scenario.gravity,
            ctl.reschedule_threshold,
            ctl.axis_rtol,
        )
        self.log.gain_solves += 1
        self._record_design("translation", self.design.translation)
        self._record_design("attitude", self.design.attitude)
        self.local_K = local_gains(self.masses, ctl.translation_Q, ctl.translation_R)
        self._event("formation established; body frame attached")
        self.phase = MissionPhase(TRACKING, self.t, self.wp_index)

    def _record_design(self, channel: str, d) -> None:
        """Keep (t, channel, CARE residual, closed-loop max real eigenvalue)."""
        self.log.designs.append((self.t, channel, d.residual, d.max_real_eig))

    def _fire_waypoint_phases(self, index: int) -> bool:
        fired = False
        while self.pending_phases and self.pending_phases[0].at_waypoint == index:
            ph = self.pending_phases.pop(0)
            for con, d in zip(self.cs.constraints, ph.distances):
                con.schedule.append(self.t, d)
            fired = True
        return fired

    def _waypoint_reached(self, wp) -> bool:
        cfg = self.cfg
        s = self.vrb
        dr = s.r_cm - wp.position
        if wp.hold == FLY_THROUGH:
            crossed = dr @ wp.velocity >= 0.0
            return np.linalg.norm(dr) < cfg.flythrough_radius or crossed
        free = self.design.attitude.free_axes
        att = np.rad2deg(attitude_error_angle(s.q, wp.quaternion, free))
        dw = s.omega_b - wp.omega_des
        if free.size:
            dw = dw - free @ (free.T @ dw)
        return (
            np.linalg.norm(dr) < cfg.wp_pos_tol
            and np.linalg.norm(s.v_cm - wp.velocity) < cfg.wp_vel_tol
            and att < cfg.wp_att_tol
            and np.rad2deg(np.linalg.norm(dw)) < cfg.wp_rate_tol
        )

    def _update_phase(self, c: np.ndarray, targets_changed: bool) -> None:
        kind = self.phase.kind
        if kind == ESTABLISHING:
            if targets_changed:
                self.settle_since = None
            if self._settled(c):
                self._attach()
            return
        if targets_changed:
            self.settle_since = None
            self.phase = MissionPhase(RECONFIGURING, self.t, self.wp_index)
            self._event("reconfiguration started")
            return
        if kind == RECONFIGURING:
            if self._settled(c):
                self._event("reconfiguration complete")
                self.phase = MissionPhase(TRACKING, self.t, self.wp_index)
                if self.wp_done:
                    self._advance_waypoint()
            return
        # tracking
        if self.wp_index is not None and not self.wp_done:
            if self._waypoint_reached(self.waypoints[self.wp_index]):
                self.wp_done = True
                self.log.waypoints_reached.append((self.wp_index, self.t))
                self._event(f"waypoint {self.wp_index} reached")
                if self._fire_waypoint_phases(self.wp_index):
                    # new targets apply from the next synchronisation
                    return
                self._advance_waypoint()

    def _advance_waypoint(self) -> None:
        if self.wp_index is not None and self.wp_index + 1 < len(self.waypoints):
            self.wp_index += 1
            self.wp_done = False
            self.phase.waypoint = self.wp_index

    def _check_complete(self) -> None:
        if self.log.complete or self.phase.kind != TRACKING or self.pending_phases:
            return
        if np.any(self.cs.desired(self.t) != self._desired):
            # targets appended this step take effect at the next one
            return
        if self.waypoints and not (self.wp_done and self.wp_index == len(self.waypoints) - 1):
            return
        self.log.complete = True
        self.log.t_complete = self.t
        self._event("mission complete")

    # control ----------------------------------------------------------------
    def _control(self):
        """Applied input forces (inertial) plus commanded/achieved wrench."""
        nan6 = np.full(6, np.nan)
        if self.phase.kind == ESTABLISHING or self.wp_index is None:
            return self.f_establish, nan6, nan6
        s = self.vrb
        wp = self.waypoints[self.wp_index]
        T = s.dcm
        if self.scenario.control.mode == "local":
            pos, vel = particles_from_vrb(s)
            q_ref = reference_attitude(s.q, wp.quaternion)
            pos_des, vel_des = desired_agent_states(wp, s.rel_pos_b, q_ref)
            f_u = local_agent_control(pos, vel, pos_des, vel_des, self.masses, self.local_K, self.scenario.gravity)
            ach = allocation.recombine(s.rel_pos_b, f_u @ T.T).as_vector()
            return f_u, ach, ach
        I = inertia(s.rel_pos_b, s.rel_vel_b, self.masses)
        if self.design.needs_resolve(I.I_cm_b):
            self.design.resolve_attitude(I.I_cm_b)
            self.log.gain_solves += 1
            self._record_design("attitude", self.design.attitude)
        cmd = wrench_command(s, I, wp, self.design)
        alloc = allocation.build_allocation(s.rel_pos_b, self.scenario.control.allocation)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            forces_b = allocation.allocate(alloc, cmd)
        ach = allocation.recombine(s.rel_pos_b, forces_b).as_vector()
        return forces_b @ T, cmd.as_vector(), ach

    # stepping ----------------------------------------------------------------
    def _abs_rhs(self, f_e):
        n = self.n

        def rhs(x):
            pos = x[: 3 * n].reshape(n, 3)
            vel = x[3 * n :].reshape(n, 3)
            f_c, c, _ = self._constraint(pos, vel, f_e)
            acc = (f_e + f_c) / self.masses[:, None]
            return np.concatenate([x[3 * n :], acc.ravel()])

        return rhs

    def _vrb_rhs(self, f_e):
        n = self.n

        def rhs(x):
            s = VrbState.unpack(x, n)
            T = s.dcm
            pos, vel = particles_from_vrb(s, T)
            f_c, _, _ = self._constraint(pos, vel, f_e)
            return vrb_derivative(s, f_e + f_c, self.masses, T)

        return rhs

    def _record(self, pos, vel, f_u, f_c, c, cmd, ach) -> None:
        k = self.k
        L = self.log
        L.t[k] = self.t
        L.positions[k] = pos
        L.velocities[k] = vel
        L.f_ext[k] = self.f_gravity
        L.f_u[k] = f_u
        L.f_c[k] = f_c
        L.c[k] = c
        L.d_des[k] = self._desired
        M = self.masses.sum()
        L.r_cm[k] = self.masses @ pos / M
        L.v_cm[k] = self.masses @ vel / M
        L.phase[k] = PHASE_CODES[self.phase.kind]
        L.waypoint[k] = -1 if self.wp_index is None or self.phase.kind == ESTABLISHING else self.wp_index
        L.wrench_cmd[k] = cmd
        L.wrench_achieved[k] = ach
        L.q_norm_drift[k] = self.q_drift
        if self.vrb is not None:
            s = self.vrb
            L.q[k] = s.q
            L.euler_deg[k] = np.rad2deg(euler321_from_quat(s.q))
            L.omega_b[k] = s.omega_b
            L.cm_residual[k] = max(
                np.linalg.norm(self.masses @ s.rel_pos_b), np.linalg.norm(self.masses @ s.rel_vel_b)
            )

    def step(self) -> bool:
        """Log the current grid point and advance one step.

        Returns False once the final grid point has been logged.
        """
        cfg = self.cfg
        self.t = self.k * cfg.dt
        desired = self.cs.sync_targets(self.t)
        changed = bool(np.any(desired != self._desired))
        self._desired = desired

        pos, vel = self.particles()
        f_u, cmd, ach = self._control()
        f_e = self.f_gravity + f_u
        f_c, c, _ = self._constraint(pos, vel, f_e)

        phase_before = self.phase.kind
        self._update_phase(c, changed)
        self._check_complete()
        if self.phase.kind != phase_before and phase_before == ESTABLISHING:
            # first control step after attachment
            pos, vel = self.particles()
            f_u, cmd, ach = self._control()
            f_e = self.f_gravity + f_u
            f_c, c, _ = self._constraint(pos, vel, f_e)

        self._record(pos, vel, f_u, f_c, c, cmd, ach)
        if self.k >= cfg.n_steps:
            return False

        acc_abs = (f_e + f_c) / self.masses[:, None]
        if self.vrb is None:
            x = self.abs_state
            k1 = np.concatenate([x[3 * self.n :], acc_abs.ravel()])
            x_new = rk4(self._abs_rhs(f_e), x, cfg.dt, k1)
            if cfg.ground_clamp:
                p = x_new[: 3 * self.n].reshape(self.n, 3)
                v = x_new[3 * self.n :].reshape(self.n, 3)
                low = p[:, 2] < 0
                p[low, 2] = 0.0
                v[low, 2] = np.maximum(v[low, 2], 0.0)
            self.abs_state = x_new
            check = x_new
        else:
            x = self.vrb.pack()
            k1 = vrb_derivative(self.vrb, f_e + f_c, self.masses)
            x_new = rk4(self._vrb_rhs(f_e), x, cfg.dt, k1)
            new = VrbState.unpack(x_new, self.n)
            norm = np.linalg.norm(new.q)
            self.q_drift = abs(norm - 1.0)
            new.q = new.q / norm
            self.vrb = new
            check = x_new
        self.cs.advance_integral(c, cfg.dt)
        if not np.all(np.isfinite(check)) or np.max(np.abs(check)) > cfg.divergence_limit:
            raise NumericalDivergence(f"state left the admissible range at t={self.t + cfg.dt:.2f} s")
        self.k += 1
        return True

    def run(self) -> SimLog:
        if self.cfg.n_steps == 0:
            # nothing to integrate: an empty log
            self.log.truncate(0)
            return self.log
        try:
            while self.step():
                pass
        except NumericalDivergence:
            self.log.truncate(self.k + 1)
            self._event("numerical divergence")
            raise
        self.log.timed_out = bool(self.waypoints) and not self.log.complete
        if self.log.timed_out:
            self._event("mission timeout")
        return self.log


def run_mission(scenario: "Scenario") -> SimLog:
    """Simulate a scenario to ``t_end``; see ``SimLog.timed_out``."""
    return Mission(scenario).run()


def replay_newton(log: SimLog, scenario: "Scenario") -> np.ndarray:
    """Direct-Newton propagation driven by the logged input history.

    Agents are integrated in absolute coordinates with the same gravity,
    logged (zero-order-held) inputs, constraint gains, target schedule and
    integral bookkeeping; the constraint force is recomputed from the
    replayed state.  Returns positions, ``(n_points, N, 3)``.
    """
    cs = scenario.constraint_set()
    masses = log.masses
    n = len(masses)
    dt = scenario.sim.dt
    g = masses[:, None] * np.array([0.0, 0.0, -scenario.gravity])
    x = np.concatenate([log.positions[0].ravel(), log.velocities[0].ravel()])
    out = np.empty_like(log.positions)
    integral = np.zeros(len(cs))
    for k in range(len(log.t)):
        out[k] = x[: 3 * n].reshape(n, 3)
        if k == len(log.t) - 1:
            break
        desired = log.d_des[k]
        if k > 0 and np.any(desired != log.d_des[k - 1]):
            integral[desired != log.d_des[k - 1]] = 0.0
        f_e = g + log.f_u[k]

        def rhs(y):
            pos = y[: 3 * n].reshape(n, 3)
            vel = y[3 * n :].reshape(n, 3)
            f_c, _, _ = stabilized_force(masses, pos, vel, f_e, cs.pairs, desired, integral, cs.gains, cs.damping)
            return np.concatenate([y[3 * n :], ((f_e + f_c) / masses[:, None]).ravel()])

        pos = x[: 3 * n].reshape(n, 3)
        vel = x[3 * n :].reshape(n, 3)
        _, c, _ = stabilized_force(masses, pos, vel, f_e, cs.pairs, desired, integral, cs.gains, cs.damping)
        x = rk4(rhs, x, dt)
        if scenario.sim.ground_clamp and log.phase[k] == 0:
            p = x[: 3 * n].reshape(n, 3)
            v = x[3 * n :].reshape(n, 3)
            low = p[:, 2] < 0
            p[low, 2] = 0.0
            v[low, 2] = np.maximum(v[low, 2], 0.0)
        integral = integral + c * dt
    return out


@dataclass
class AuditReport:
    max_net_constraint_force: float
    max_net_constraint_torque: float
    max_rowspace_residual: float
    max_q_norm_drift: float
    max_cm_residual: float
    max_input: float
    max_input_agent: int
    max_input_time: float
    thrust_budget: float = THRUST_BUDGET

    @property
    def within_budget(self) -> bool:
        return self.max_input < self.thrust_budget

    def text(self) -> str:
        lines = [
            f"max |sum f_C|                 {self.max_net_constraint_force:.3e} N",
            f"max |net constraint torque|   {self.max_net_constraint_torque:.3e} N m",
            f"max f_C row-space residual    {self.max_rowspace_residual:.3e} N",
            f"max quaternion norm drift     {self.max_q_norm_drift:.3e}",
            f"max CM consistency residual   {self.max_cm_residual:.3e}",
            f"max per-agent input |f_u|     {self.max_input:.4f} N "
            f"(agent {self.max_input_agent + 1}, t = {self.max_input_time:.2f} s)",
            f"vehicle thrust budget         {self.thrust_budget:.1f} N -> "
            f"{'within budget' if self.within_budget else 'EXCEEDED'}",
        ]
        return "\n".join(lines) + "\n"


def rowspace_residual(positions: np.ndarray, pairs: np.ndarray, f_c: np.ndarray, masses: np.ndarray) -> float:
    """Distance of ``f_C`` from the row space of the constraint Jacobian."""
    if len(pairs) == 0:
        return float(np.linalg.norm(f_c))
    from .constraints import ConstraintSet, DistanceConstraint, PiecewiseConstant

    cs = ConstraintSet([DistanceConstraint(int(i), int(j), PiecewiseConstant.constant(1.0)) for i, j in pairs])
    J = constraint_jacobian(ParticleSystem(masses, positions, np.zeros_like(positions)), cs)
    f = f_c.ravel()
    lam = np.linalg.lstsq(J.T, f, rcond=None)[0]
    return float(np.linalg.norm(f - J.T @ lam))


def momentum_energy_audit(log: SimLog) -> AuditReport:
    n_pts = len(log.t)
    masses = log.masses
    net_f = 0.0
    net_tau = 0.0
    row = 0.0
    for k in range(n_pts):
        f_c = log.f_c[k]
        net_f = max(net_f, float(np.linalg.norm(f_c.sum(axis=0))))
        arm = log.positions[k] - log.r_cm[k]
        net_tau = max(net_tau, float(np.linalg.norm(cross(arm, f_c).sum(axis=0))))
        row = max(row, rowspace_residual(log.positions[k], log.pairs, f_c, masses))
    if n_pts:
        mags = np.linalg.norm(log.f_u, axis=2)
        kmax, imax = np.unravel_index(int(np.argmax(mags)), mags.shape)
        max_in = float(mags[kmax, imax])
        t_in = float(log.t[kmax])
    else:
        max_in, imax, t_in = 0.0, 0, 0.0
    return AuditReport(
        max_net_constraint_force=net_f,
        max_net_constraint_torque=net_tau,
        max_rowspace_residual=row,
        max_q_norm_drift=float(np.max(log.q_norm_drift, initial=0.0)),
        max_cm_residual=float(np.max(log.cm_residual, initial=0.0)),
        max_input=max_in,
        max_input_agent=int(imax),
        max_input_time=t_in,
    )
