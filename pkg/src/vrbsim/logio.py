"""CSV export of a SimLog.

Files written to the output directory (agent and constraint labels are
1-based, angles in degrees):

``agents.csv``
    ``t``, then per agent ``r{i}_x..z``, ``v{i}_x..z``, ``fext{i}_x..z``
    (gravity), ``fu{i}_x..z`` (input), ``fc{i}_x..z`` (constraint force).
``constraints.csv``
    ``t``, ``c_{i}_{j}`` for each constraint, then ``d_{i}_{j}`` (desired).
``vrb.csv``
    ``t``, ``rcm_*``, ``vcm_*``, ``q0..q3``, ``roll_deg``, ``pitch_deg``,
    ``yaw_deg``, ``p_dps``, ``q_dps``, ``r_dps``, ``phase`` (0 establishing,
    1 tracking, 2 reconfiguring), ``waypoint`` (-1 when none is active).
    Attitude columns read ``nan`` before the body frame exists.
``inputs.csv``
    ``t``, ``fu{i}_norm`` per agent, commanded wrench ``cmd_f*``/``cmd_tau*``
    and achieved wrench ``ach_f*``/``ach_tau*`` (body frame).
``audit.txt``
    Momentum and consistency audit plus the event list.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .sim import SimLog, momentum_energy_audit

FLOAT_FMT = "%.12g"
AXES = ("x", "y", "z")


def _write(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    n = len(columns[0]) if columns else 0
    data = np.column_stack([np.asarray(c, dtype=float).reshape(n, -1) for c in columns]) if n else np.zeros((0, len(header)))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        if n:
            np.savetxt(fh, data, fmt=FLOAT_FMT, delimiter=",")


def _vec_names(prefix: str) -> list[str]:
    return [f"{prefix}_{a}" for a in AXES]


def write_log(log: SimLog, out_dir: str | Path) -> list[Path]:
    """Write the CSV files and ``audit.txt``; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = log.n_agents
    n_pts = len(log.t)
    t = log.t

    header = ["t"]
    cols = [t]
    for i in range(n):
        for key, arr in (("r", log.positions), ("v", log.velocities), ("fext", log.f_ext), ("fu", log.f_u), ("fc", log.f_c)):
            header += _vec_names(f"{key}{i + 1}")
            cols.append(arr[:, i, :])
    paths = [out / "agents.csv"]
    _write(paths[-1], header, cols)

    labels = [f"{i + 1}_{j + 1}" for i, j in log.pairs]
    header = ["t"] + [f"c_{s}" for s in labels] + [f"d_{s}" for s in labels]
    paths.append(out / "constraints.csv")
    _write(paths[-1], header, [t, log.c, log.d_des])

    header = (
        ["t"]
        + _vec_names("rcm")
        + _vec_names("vcm")
        + ["q0", "q1", "q2", "q3", "roll_deg", "pitch_deg", "yaw_deg", "p_dps", "q_dps", "r_dps", "phase", "waypoint"]
    )
    paths.append(out / "vrb.csv")
    _write(
        paths[-1],
        header,
        [t, log.r_cm, log.v_cm, log.q, log.euler_deg, np.rad2deg(log.omega_b), log.phase, log.waypoint],
    )

    wrench = ["fx", "fy", "fz", "taux", "tauy", "tauz"]
    header = ["t"] + [f"fu{i + 1}_norm" for i in range(n)] + [f"cmd_{w}" for w in wrench] + [f"ach_{w}" for w in wrench]
    norms = np.linalg.norm(log.f_u, axis=2) if n_pts else np.zeros((0, n))
    paths.append(out / "inputs.csv")
    _write(paths[-1], header, [t, norms, log.wrench_cmd, log.wrench_achieved])

    paths.append(out / "audit.txt")
    with open(paths[-1], "w") as fh:
        fh.write(momentum_energy_audit(log).text())
        fh.write(f"mission complete              {'yes' if log.complete else 'no'}")
        fh.write(f" (t = {log.t_complete:.2f} s)\n" if log.t_complete is not None else "\n")
        fh.write(f"timed out                     {'yes' if log.timed_out else 'no'}\n")
        fh.write(f"attitude gain solves          {log.gain_solves}\n")
        fh.write("events:\n")
        for when, text in log.events:
            fh.write(f"  {when:10.2f} s  {text}\n")
    return paths


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of one of the CSV files."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = fh.read()
    if not rows.strip():
        return header, np.zeros((0, len(header)))
    return header, np.loadtxt(io.StringIO(rows), delimiter=",", ndmin=2)
