"""Distribution of a centre-of-mass force/torque demand to agent forces.

Two assemblies of the stacking matrix ``H`` are supported:

``min_norm_wrench`` (default)
    ``H`` is ``6 x 3N``, ``[I ... I; dr_1^x ... dr_N^x]``; the allocation is
    the minimum-norm exact solution of ``H f = [f_cm; tau_cm]``.

``paper_left_pinv``
    ``H`` is ``(3 + 3N) x 3N`` with one torque block per agent on the
    diagonal; the allocation is the left pseudo-inverse solution with each
    agent asked for an equal share ``tau_cm / N`` of the torque.  With zero
    torque demands the achieved net force falls short of the command; it is
    kept for comparison runs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient
from .rotation import cross, skew

MIN_NORM = "min_norm_wrench"
LEFT_PINV = "paper_left_pinv"
MODES = (MIN_NORM, LEFT_PINV)

SV_RTOL = 1e-9


@dataclass
class WrenchCommand:
    f_cm_b: np.ndarray
    tau_cm_b: np.ndarray

    def __post_init__(self):
        self.f_cm_b = np.asarray(self.f_cm_b, dtype=float)
        self.tau_cm_b = np.asarray(self.tau_cm_b, dtype=float)
        if not (np.all(np.isfinite(self.f_cm_b)) and np.all(np.isfinite(self.tau_cm_b))):
            raise ValueError("wrench command has non-finite components")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.f_cm_b, self.tau_cm_b])


@dataclass
class AllocationMatrix:
    H: np.ndarray
    mode: str
    rank: int
    rank_deficient: bool
    pinv: np.ndarray


def build_allocation(rel_pos_b: np.ndarray, mode: str = MIN_NORM, sv_rtol: float = SV_RTOL) -> AllocationMatrix:
    rel_pos_b = np.asarray(rel_pos_b, dtype=float).reshape(-1, 3)
    n = len(rel_pos_b)
    if n < 1:
        raise ValueError("need at least one agent")
    if mode == MIN_NORM:
        H = np.zeros((6, 3 * n))
        for i, r in enumerate(rel_pos_b):
            H[0:3, 3 * i : 3 * i + 3] = np.eye(3)
            H[3:6, 3 * i : 3 * i + 3] = skew(r)
        full = 6 if n >= 3 else min(6, 3 * n)
    elif mode == LEFT_PINV:
        H = np.zeros((3 + 3 * n, 3 * n))
        for i, r in enumerate(rel_pos_b):
            H[0:3, 3 * i : 3 * i + 3] = np.eye(3)
            H[3 + 3 * i : 6 + 3 * i, 3 * i : 3 * i + 3] = skew(r)
        full = 3 * n
    else:
        raise ValueError(f"unknown allocation mode {mode!r}")
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    keep = s > sv_rtol * s[0]
    rank = int(keep.sum())
    pinv = (Vt[keep].T / s[keep]) @ U[:, keep].T
    return AllocationMatrix(H=H, mode=mode, rank=rank, rank_deficient=rank < full, pinv=pinv)


def _demand(alloc: AllocationMatrix, cmd: WrenchCommand) -> np.ndarray:
    if alloc.mode == MIN_NORM:
        return cmd.as_vector()
    n = alloc.H.shape[1] // 3
    return np.concatenate([cmd.f_cm_b, np.tile(cmd.tau_cm_b / n, n)])


def allocate(alloc: AllocationMatrix, cmd: WrenchCommand, strict: bool = False) -> np.ndarray:
    """Per-agent body-frame forces, ``(N, 3)``.

    In ``min_norm_wrench`` mode a demand outside the range of ``H`` (e.g.
    torque about the axis of a collinear formation) cannot be met; the
    unreachable part is dropped with a warning, or ``RankDeficient`` is
    raised when ``strict`` is set.
    """
    demand = _demand(alloc, cmd)
    f = alloc.pinv @ demand
    if alloc.mode == MIN_NORM and alloc.rank_deficient:
        miss = np.linalg.norm(alloc.H @ f - demand)
        if miss > 1e-9 * max(1.0, np.linalg.norm(demand)):
            msg = f"wrench demand not reachable with rank-{alloc.rank} allocation (residual {miss:.3g})"
            if strict:
                raise RankDeficient(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return f.reshape(-1, 3)


def recombine(rel_pos_b: np.ndarray, forces_b: np.ndarray) -> WrenchCommand:
    """Net force and torque about the CM produced by agent forces."""
    forces_b = np.asarray(forces_b, dtype=float).reshape(-1, 3)
    return WrenchCommand(forces_b.sum(axis=0), cross(rel_pos_b, forces_b).sum(axis=0))
