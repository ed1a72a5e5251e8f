"""Distance-constraint evaluation and Baumgarte-stabilized constraint forces.

Agent coordinates are stacked agent-major, ``[r_1; r_2; ...; r_N]``, so a
``(N, 3)`` position array flattens directly into the 3N vector the
Jacobians act on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometry, RankDeficient, ValidationError

SEPARATION_EPS = 1e-6
PIVOT_RTOL = 1e-10
RANK_RTOL = 1e-10


class PiecewiseConstant:
    """Left-closed piecewise-constant function of time.

    ``values[k]`` holds on ``[breakpoints[k], breakpoints[k+1])``; the first
    breakpoint is the start of the first interval and values before it take
    the first value.
    """

    def __init__(self, breakpoints: Sequence[float], values: Sequence[float]):
        if len(breakpoints) != len(values) or not values:
            raise ValueError("breakpoints and values must be non-empty and equally long")
        bp = np.asarray(breakpoints, dtype=float)
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        self.breakpoints = bp
        self.values = np.asarray(values, dtype=float)

    def __call__(self, t: float) -> float:
        k = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return float(self.values[max(k, 0)])

    def append(self, t: float, value: float) -> None:
        if t <= self.breakpoints[-1]:
            raise ValueError("new breakpoint must come after the last one")
        self.breakpoints = np.append(self.breakpoints, t)
        self.values = np.append(self.values, value)

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstant":
        return cls([0.0], [value])


@dataclass
class DistanceConstraint:
    agent_i: int
    agent_j: int
    schedule: PiecewiseConstant

    def __post_init__(self):
        if self.agent_i == self.agent_j:
            raise ValidationError(f"constraint joins agent {self.agent_i} to itself")
        if self.agent_i > self.agent_j:
            self.agent_i, self.agent_j = self.agent_j, self.agent_i
        if np.any(self.schedule.values <= 0):
            raise ValidationError(f"pair ({self.agent_i}, {self.agent_j}) has a non-positive desired distance")


@dataclass
class BaumgarteGains:
    """Stabilization gains: damping ``alpha`` [1/s], stiffness ``beta`` [1/s],
    integral ``gamma`` [1/s^3]."""

    alpha: float = 1.2
    beta: float = 1.2
    gamma: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.gamma < 0:
            raise ValidationError("alpha and beta must be > 0 and gamma >= 0")


@dataclass
class ParticleSystem:
    masses: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 3)
        if np.any(self.masses <= 0):
            raise ValidationError("agent masses must be positive")
        if not (len(self.masses) == len(self.positions) == len(self.velocities)):
            raise ValidationError("masses, positions and velocities disagree on agent count")

    @property
    def n_agents(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def center_of_mass(self) -> np.ndarray:
        return self.masses @ self.positions / self.total_mass

    @property
    def cm_velocity(self) -> np.ndarray:
        return self.masses @ self.velocities / self.total_mass


@dataclass
class ConstraintSet:
    """Ordered distance constraints plus gains and integral memory.

    ``damping`` (dimensionless, default 0) adds ``damping * mean(diag(A))`` to
    the diagonal of ``A = J M^-1 J^T`` before solving.  Leave it at zero for
    exact constraint dynamics; a small value lets a formation pass through a
    singular (collinear) configuration without the multipliers blowing up.
    """

    constraints: list[DistanceConstraint]
    gains: BaumgarteGains = field(default_factory=BaumgarteGains)
    damping: float = 0.0
    partial: bool = False
    integral: np.ndarray = field(default=None)

    def __post_init__(self):
        seen = set()
        for con in self.constraints:
            key = (con.agent_i, con.agent_j)
            if key in seen:
                raise ValidationError(f"duplicate constraint pair {key}")
            seen.add(key)
        if self.integral is None:
            self.integral = np.zeros(len(self.constraints))
        self._last_desired = None
        self.pairs = np.array([(c.agent_i, c.agent_j) for c in self.constraints], dtype=int).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.constraints)

    def desired(self, t: float) -> np.ndarray:
        return np.array([c.schedule(t) for c in self.constraints])

    def sync_targets(self, t: float) -> np.ndarray:
        """Return desired distances at ``t``, zeroing the integral of every
        constraint whose target changed since the previous call."""
        d = self.desired(t)
        if self._last_desired is not None:
            changed = d != self._last_desired
            self.integral[changed] = 0.0
        self._last_desired = d
        return d

    def advance_integral(self, c: np.ndarray, dt: float) -> None:
        self.integral += c * dt

    def check_indices(self, n_agents: int) -> None:
        if len(self) and (self.pairs.min() < 0 or self.pairs.max() >= n_agents):
            raise ValidationError(f"constraint index out of range for {n_agents} agents")


def _pair_geometry(positions: np.ndarray, pairs: np.ndarray):
    e = positions[pairs[:, 0]] - positions[pairs[:, 1]]
    length = np.linalg.norm(e, axis=1)
    if np.any(length < SEPARATION_EPS):
        k = int(np.argmin(length))
        raise DegenerateGeometry(f"agents {tuple(pairs[k])} are coincident (separation {length[k]:.3g} m)")
    return e, length


def _scatter_rows(rows: np.ndarray, pairs: np.ndarray, n_agents: int) -> np.ndarray:
    m = len(pairs)
    out = np.zeros((m, n_agents, 3))
    k = np.arange(m)
    out[k, pairs[:, 0]] = rows
    out[k, pairs[:, 1]] = -rows
    return out.reshape(m, 3 * n_agents)


def evaluate_constraints(sys: ParticleSystem, cs: ConstraintSet, t: float) -> np.ndarray:
    """Constraint values ``c_k = |r_i - r_j| - d_k(t)`` in ConstraintSet order."""
    _, length = _pair_geometry(sys.positions, cs.pairs)
    return length - cs.desired(t)


def constraint_jacobian(sys: ParticleSystem, cs: ConstraintSet, t: float = 0.0) -> np.ndarray:
    """``dc/dr`` as an ``(m, 3N)`` array."""
    e, length = _pair_geometry(sys.positions, cs.pairs)
    return _scatter_rows(e / length[:, None], cs.pairs, sys.n_agents)


def jacobian_rate(sys: ParticleSystem, cs: ConstraintSet, t: float = 0.0) -> np.ndarray:
    """Exact time derivative of the constraint Jacobian."""
    e, length = _pair_geometry(sys.positions, cs.pairs)
    u = e / length[:, None]
    ev = sys.velocities[cs.pairs[:, 0]] - sys.velocities[cs.pairs[:, 1]]
    u_dot = (ev - u * np.sum(u * ev, axis=1, keepdims=True)) / length[:, None]
    return _scatter_rows(u_dot, cs.pairs, sys.n_agents)


def stabilized_force(
    masses: np.ndarray,
    positions: np.ndarray,
    velocities: np.ndarray,
    f_external: np.ndarray,
    pairs: np.ndarray,
    desired: np.ndarray,
    integral: np.ndarray,
    gains: BaumgarteGains,
    damping: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array-level constraint force kernel.

    Returns ``(f_C, c, lam)`` with ``f_C`` shaped like ``positions``.
    """
    n = len(masses)
    m = len(pairs)
    if m == 0:
        return np.zeros((n, 3)), np.zeros(0), np.zeros(0)
    e, length = _pair_geometry(positions, pairs)
    u = e / length[:, None]
    ev = velocities[pairs[:, 0]] - velocities[pairs[:, 1]]
    c = length - desired
    c_dot = np.einsum("ij,ij->i", u, ev)
    # J_dot r_dot per row is u_dot . (v_i - v_j) = (|ev|^2 - c_dot^2) / length
    jdot_rdot = (np.einsum("ij,ij->i", ev, ev) - c_dot**2) / length
    inv_m = 1.0 / masses
    acc_ext = f_external * inv_m[:, None]
    j_minv_fe = np.einsum("ij,ij->i", u, acc_ext[pairs[:, 0]] - acc_ext[pairs[:, 1]])

    # J M^-1 J^T = (u_k . u_l) * (D M^-1 D^T)_kl with D the signed incidence matrix
    D = np.zeros((m, n))
    rows = np.arange(m)
    D[rows, pairs[:, 0]] = 1.0
    D[rows, pairs[:, 1]] = -1.0
    A = (u @ u.T) * ((D * inv_m) @ D.T)
    if damping > 0:
        A = A + damping * np.mean(np.diag(A)) * np.eye(m)
    rhs = (
        -j_minv_fe
        - jdot_rdot
        - 2.0 * gains.alpha * c_dot
        - gains.beta**2 * c
        - gains.gamma * integral
    )
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("J M^-1 J^T is not positive definite; constraints are redundant") from exc
    piv = np.diag(L) ** 2
    if piv.min() < PIVOT_RTOL * piv.max():
        raise RankDeficient(
            f"constraint system is redundant at this configuration (pivot ratio {piv.min() / piv.max():.2e})"
        )
    lam = np.linalg.solve(A, rhs)
    f_c = D.T @ (lam[:, None] * u)
    return f_c, c, lam


def constraint_force(
    sys: ParticleSystem,
    cs: ConstraintSet,
    f_external: np.ndarray,
    t: float,
    dt: float | None = None,
) -> np.ndarray:
    """Stabilized constraint force on every agent, shape ``(N, 3)``.

    ``f_external`` is every non-constraint force (gravity, inputs).  When
    ``dt`` is given the integral memory is advanced by ``c * dt`` after the
    force has been computed.
    """
    f_external = np.asarray(f_external, dtype=float).reshape(sys.n_agents, 3)
    f_c, c, _ = stabilized_force(
        sys.masses,
        sys.positions,
        sys.velocities,
        f_external,
        cs.pairs,
        cs.desired(t),
        cs.integral,
        cs.gains,
        cs.damping,
    )
    if dt is not None:
        cs.advance_integral(c, dt)
    return f_c


@dataclass(frozen=True)
class RigidityReport:
    rank: int
    required: int
    n_constraints: int
    is_rigid: bool
    is_overconstrained: bool
    partial: bool

    @property
    def passes(self) -> bool:
        if self.is_overconstrained:
            return False
        return self.partial or self.is_rigid

    def summary(self) -> str:
        mode = " (partial mode)" if self.partial else ""
        return (
            f"rank {self.rank} / required {self.required}, rigid: {'yes' if self.is_rigid else 'no'}, "
            f"overconstrained: {'yes' if self.is_overconstrained else 'no'}{mode}"
        )


def rigidity_check(cs: ConstraintSet, sys: ParticleSystem) -> RigidityReport:
    """Numerical rank of the constraint Jacobian at the given configuration."""
    n = sys.n_agents
    required = max(3 * n - 6, 0)
    m = len(cs)
    if m == 0:
        rank = 0
    else:
        J = constraint_jacobian(sys, cs)
        sv = np.linalg.svd(J, compute_uv=False)
        rank = int(np.sum(sv > sv[0] * 3 * n * RANK_RTOL))
    return RigidityReport(
        rank=rank,
        required=required,
        n_constraints=m,
        is_rigid=(rank == required and n >= 3),
        is_overconstrained=m > rank,
        partial=cs.partial,
    )
