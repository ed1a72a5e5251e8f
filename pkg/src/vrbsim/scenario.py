"""Scenario files: YAML schema, validation, normalized dump and bundled lookup.

Agent indices in files are 1-based (as in the formation tables); they are
converted to 0-based on parsing.  Angles are in degrees in files.

Schema (every key except ``agents`` and ``constraints.pairs`` is optional)::

    name: str
    description: str
    gravity: 9.81
    agents: [{mass, position: [x,y,z], velocity: [x,y,z]}, ...]
    constraints:
      pairs: [[i, j], ...]
      phases:                      # first phase must have start: 0
        - {start: 0.0, distances: [...]}
        - {start: 6.0, distances: [...]}       # time-triggered
        - {at_waypoint: 4, distances: [...]}   # fires when waypoint 4 is reached
      gains: {alpha, beta, gamma}
      damping: 0.0
      partial: false
    frame: {x_axis_agent: k, y_axis_pair: [i, j]}
    establishment_input: {force: [fx, fy, fz], hover: true}
    control:
      mode: wrench | local
      allocation: min_norm_wrench | paper_left_pinv
      translation: {Q: [q_pos, q_vel], R: r}
      attitude: {Q: [q_att, q_rate], R: r}
      reschedule_threshold: 0.05
      free_axis_rtol: 0.01
    waypoints: [{position, velocity, attitude_deg, rates_deg, hold}, ...]
    sim: {dt, t_end, establish_tol, ...}
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .allocation import MODES
from .constraints import (
    BaumgarteGains,
    ConstraintSet,
    DistanceConstraint,
    ParticleSystem,
    PiecewiseConstant,
    rigidity_check,
)
from .dynamics import FrameSpec
from .errors import ParseError, ScenarioError, ValidationError, VrbError
from .guidance import FLY_THROUGH, STOP, Waypoint
from .sim import SimConfig

CONTROL_MODES = ("wrench", "local")


@dataclass
class SchedulePhase:
    distances: np.ndarray
    start: float | None = None
    at_waypoint: int | None = None


@dataclass
class ControlSpec:
    mode: str = "wrench"
    allocation: str = "min_norm_wrench"
    translation_Q: tuple = (2.0, 4.0)
    translation_R: float = 1.0
    attitude_Q: tuple = (20.0, 5.0)
    attitude_R: float = 1.0
    reschedule_threshold: float = 0.05
    axis_rtol: float = 0.01


@dataclass
class Scenario:
    name: str
    masses: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    pairs: np.ndarray
    schedule: list[SchedulePhase]
    gains: BaumgarteGains = field(default_factory=BaumgarteGains)
    damping: float = 0.0
    partial: bool = False
    frame: FrameSpec = field(default_factory=lambda: FrameSpec(2, (0, 1)))
    gravity: float = 9.81
    establish_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    establish_hover: bool = True
    control: ControlSpec = field(default_factory=ControlSpec)
    waypoints: list[Waypoint] = field(default_factory=list)
    sim: SimConfig = field(default_factory=SimConfig)
    description: str = ""

    @property
    def n_agents(self) -> int:
        return len(self.masses)

    def establish_forces(self) -> np.ndarray:
        """Per-agent open-loop establishment input, inertial ``(N, 3)``."""
        f = np.tile(self.establish_force, (self.n_agents, 1))
        if self.establish_hover:
            f[:, 2] += self.masses * self.gravity
        return f

    def constraint_set(self) -> ConstraintSet:
        """Fresh ConstraintSet holding the time-triggered part of the schedule."""
        timed = [p for p in self.schedule if p.start is not None]
        cons = []
        for k, (i, j) in enumerate(self.pairs):
            sched = PiecewiseConstant([p.start for p in timed], [p.distances[k] for p in timed])
            cons.append(DistanceConstraint(int(i), int(j), sched))
        return ConstraintSet(cons, copy.copy(self.gains), self.damping, self.partial)

    def particle_system(self) -> ParticleSystem:
        return ParticleSystem(self.masses, self.positions, self.velocities)


# parsing ----------------------------------------------------------------------


def _vec(value: Any, path: str, length: int = 3) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError("expected a list of numbers", path) from None
    if arr.shape != (length,):
        raise ValidationError(f"expected {length} numbers", path)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("values must be finite", path)
    return arr


def _num(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError("expected a number", path)
    if not np.isfinite(value):
        raise ValidationError("value must be finite", path)
    return float(value)


def _index(value: Any, n: int, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError("expected an integer agent index", path)
    if not 1 <= value <= n:
        raise ValidationError(f"agent index {value} outside 1..{n}", path)
    return value - 1


def _mapping(value: Any, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ValidationError("expected a mapping", path)
    return value


def _reject_unknown(d: dict, allowed: set, path: str) -> None:
    extra = set(d) - allowed
    if extra:
        key = sorted(map(str, extra))[0]
        raise ValidationError("unknown field", f"{path}.{key}" if path else key)


def _parse_agents(raw: Any) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not isinstance(raw, list) or not raw:
        raise ValidationError("need a non-empty list of agents", "agents")
    masses, pos, vel = [], [], []
    for k, a in enumerate(raw):
        p = f"agents[{k}]"
        a = _mapping(a, p)
        _reject_unknown(a, {"mass", "position", "velocity"}, p)
        if "mass" not in a or "position" not in a:
            raise ValidationError("agent needs mass and position", p)
        m = _num(a["mass"], f"{p}.mass")
        if m <= 0:
            raise ValidationError("mass must be positive", f"{p}.mass")
        masses.append(m)
        pos.append(_vec(a["position"], f"{p}.position"))
        vel.append(_vec(a.get("velocity", [0, 0, 0]), f"{p}.velocity"))
    return np.array(masses), np.array(pos), np.array(vel)


def _parse_constraints(raw: Any, n: int, n_waypoints: int):
    raw = _mapping(raw, "constraints")
    _reject_unknown(raw, {"pairs", "phases", "gains", "damping", "partial"}, "constraints")
    pairs_raw = raw.get("pairs", [])
    if not isinstance(pairs_raw, list):
        raise ValidationError("expected a list of index pairs", "constraints.pairs")
    pairs = []
    seen = {}
    for k, pr in enumerate(pairs_raw):
        p = f"constraints.pairs[{k}]"
        if not isinstance(pr, (list, tuple)) or len(pr) != 2:
            raise ValidationError("expected [i, j]", p)
        i, j = _index(pr[0], n, p), _index(pr[1], n, p)
        if i == j:
            raise ValidationError(f"pair ({i + 1}, {j + 1}) joins an agent to itself", p)
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ValidationError(
                f"duplicate constraint pair ({key[0] + 1}, {key[1] + 1}), also at constraints.pairs[{seen[key]}]", p
            )
        seen[key] = k
        pairs.append(key)
    m = len(pairs)
    phases_raw = raw.get("phases")
    if phases_raw is None:
        phases_raw = [] if m == 0 else None
    if phases_raw is None or not isinstance(phases_raw, list) or (m and not phases_raw):
        raise ValidationError("need a list of schedule phases", "constraints.phases")
    phases: list[SchedulePhase] = []
    last_start = None
    last_wp = None
    for k, ph in enumerate(phases_raw):
        p = f"constraints.phases[{k}]"
        ph = _mapping(ph, p)
        _reject_unknown(ph, {"start", "at_waypoint", "distances"}, p)
        if ("start" in ph) == ("at_waypoint" in ph):
            raise ValidationError("phase needs exactly one of start or at_waypoint", p)
        d = _vec(ph.get("distances"), f"{p}.distances", m)
        if np.any(d <= 0):
            raise ValidationError("desired distances must be positive", f"{p}.distances")
        if "start" in ph:
            s = _num(ph["start"], f"{p}.start")
            if last_wp is not None:
                raise ValidationError("time-triggered phases must precede waypoint-triggered ones", p)
            if last_start is None and s != 0:
                raise ValidationError("the first phase must start at 0", f"{p}.start")
            if last_start is not None and s <= last_start:
                raise ValidationError("schedule breakpoints must be strictly increasing", f"{p}.start")
            last_start = s
            phases.append(SchedulePhase(d, start=s))
        else:
            w = ph["at_waypoint"]
            if isinstance(w, bool) or not isinstance(w, int) or not 0 <= w < n_waypoints:
                raise ValidationError(f"waypoint index must be in 0..{n_waypoints - 1}", f"{p}.at_waypoint")
            if last_start is None:
                raise ValidationError("the first phase must start at 0", p)
            if last_wp is not None and w < last_wp:
                raise ValidationError("waypoint-triggered phases must be in waypoint order", f"{p}.at_waypoint")
            last_wp = w
            phases.append(SchedulePhase(d, at_waypoint=w))
    g = _mapping(raw.get("gains"), "constraints.gains")
    _reject_unknown(g, {"alpha", "beta", "gamma"}, "constraints.gains")
    defaults = BaumgarteGains()
    try:
        gains = BaumgarteGains(
            _num(g.get("alpha", defaults.alpha), "constraints.gains.alpha"),
            _num(g.get("beta", defaults.beta), "constraints.gains.beta"),
            _num(g.get("gamma", defaults.gamma), "constraints.gains.gamma"),
        )
    except ValidationError as exc:
        raise ValidationError(str(exc), "constraints.gains") from None
    damping = _num(raw.get("damping", 0.0), "constraints.damping")
    if damping < 0:
        raise ValidationError("damping must be non-negative", "constraints.damping")
    partial = raw.get("partial", False)
    if not isinstance(partial, bool):
        raise ValidationError("expected true or false", "constraints.partial")
    return np.array(pairs, dtype=int).reshape(-1, 2), phases, gains, damping, partial


def _parse_waypoints(raw: Any) -> list[Waypoint]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ValidationError("expected a list", "waypoints")
    out = []
    for k, w in enumerate(raw):
        p = f"waypoints[{k}]"
        w = _mapping(w, p)
        _reject_unknown(w, {"position", "velocity", "attitude_deg", "rates_deg", "hold"}, p)
        if "position" not in w:
            raise ValidationError("waypoint needs a position", p)
        kw = {name: _vec(w[name], f"{p}.{name}") for name in ("position", "velocity", "attitude_deg", "rates_deg") if name in w}
        hold = w.get("hold", STOP)
        if hold not in (STOP, FLY_THROUGH):
            raise ValidationError(f"hold must be {STOP} or {FLY_THROUGH}", f"{p}.hold")
        try:
            out.append(Waypoint(hold=hold, **kw))
        except ValueError as exc:
            raise ValidationError(str(exc), p) from None
    return out


def _parse_pair_of(value: Any, path: str) -> tuple[float, float]:
    v = _vec(value, path, 2)
    if np.any(v < 0):
        raise ValidationError("weights must be non-negative", path)
    return float(v[0]), float(v[1])


def _parse_control(raw: Any) -> ControlSpec:
    raw = _mapping(raw, "control")
    _reject_unknown(
        raw, {"mode", "allocation", "translation", "attitude", "reschedule_threshold", "free_axis_rtol"}, "control"
    )
    d = ControlSpec()
    mode = raw.get("mode", d.mode)
    if mode not in CONTROL_MODES:
        raise ValidationError(f"mode must be one of {', '.join(CONTROL_MODES)}", "control.mode")
    alloc = raw.get("allocation", d.allocation)
    if alloc not in MODES:
        raise ValidationError(f"allocation must be one of {', '.join(MODES)}", "control.allocation")
    out = {}
    for ch, q_default, r_default in (
        ("translation", d.translation_Q, d.translation_R),
        ("attitude", d.attitude_Q, d.attitude_R),
    ):
        c = _mapping(raw.get(ch), f"control.{ch}")
        _reject_unknown(c, {"Q", "R"}, f"control.{ch}")
        out[f"{ch}_Q"] = _parse_pair_of(c.get("Q", list(q_default)), f"control.{ch}.Q")
        r = _num(c.get("R", r_default), f"control.{ch}.R")
        if r <= 0:
            raise ValidationError("R must be positive", f"control.{ch}.R")
        out[f"{ch}_R"] = r
    thr = _num(raw.get("reschedule_threshold", d.reschedule_threshold), "control.reschedule_threshold")
    rtol = _num(raw.get("free_axis_rtol", d.axis_rtol), "control.free_axis_rtol")
    if thr <= 0 or not 0 <= rtol < 1:
        raise ValidationError("threshold must be positive and rtol in [0, 1)", "control")
    return ControlSpec(mode, alloc, reschedule_threshold=thr, axis_rtol=rtol, **out)


def _parse_sim(raw: Any) -> SimConfig:
    raw = _mapping(raw, "sim")
    names = {f.name for f in fields(SimConfig)}
    _reject_unknown(raw, names, "sim")
    kw = {}
    for key, value in raw.items():
        if key == "ground_clamp":
            if not isinstance(value, bool):
                raise ValidationError("expected true or false", "sim.ground_clamp")
            kw[key] = value
        else:
            kw[key] = _num(value, f"sim.{key}")
    return SimConfig(**kw)


TOP_LEVEL = {
    "name",
    "description",
    "gravity",
    "agents",
    "constraints",
    "frame",
    "establishment_input",
    "control",
    "waypoints",
    "sim",
}


def scenario_from_dict(data: Any) -> Scenario:
    if not isinstance(data, dict):
        raise ParseError("scenario document must be a mapping")
    _reject_unknown(data, TOP_LEVEL, "")
    masses, pos, vel = _parse_agents(data.get("agents"))
    n = len(masses)
    waypoints = _parse_waypoints(data.get("waypoints"))
    pairs, phases, gains, damping, partial = _parse_constraints(data.get("constraints"), n, len(waypoints))

    fr = _mapping(data.get("frame"), "frame")
    _reject_unknown(fr, {"x_axis_agent", "y_axis_pair"}, "frame")
    if n >= 3:
        x_ag = _index(fr.get("x_axis_agent", 3), n, "frame.x_axis_agent")
        yp = fr.get("y_axis_pair", [1, 2])
        if not isinstance(yp, list) or len(yp) != 2:
            raise ValidationError("expected [i, j]", "frame.y_axis_pair")
        ya, yb = _index(yp[0], n, "frame.y_axis_pair"), _index(yp[1], n, "frame.y_axis_pair")
        if x_ag in (ya, yb) or ya == yb:
            raise ValidationError("x-axis agent must not be part of the y-axis pair", "frame")
        frame = FrameSpec(x_ag, (ya, yb))
    else:
        if fr:
            raise ValidationError("a body frame needs at least three agents", "frame")
        frame = FrameSpec(-1, (-1, -1))
        if waypoints:
            raise ValidationError("waypoint missions need at least three agents", "waypoints")

    gravity = _num(data.get("gravity", 9.81), "gravity")
    if gravity < 0:
        raise ValidationError("gravity must be non-negative", "gravity")
    ei = _mapping(data.get("establishment_input"), "establishment_input")
    _reject_unknown(ei, {"force", "hover"}, "establishment_input")
    force = _vec(ei.get("force", [0, 0, 0]), "establishment_input.force")
    hover = ei.get("hover", True)
    if not isinstance(hover, bool):
        raise ValidationError("expected true or false", "establishment_input.hover")

    name = data.get("name", "scenario")
    desc = data.get("description", "")
    if not isinstance(name, str) or not isinstance(desc, str):
        raise ValidationError("name and description must be strings", "name")

    sc = Scenario(
        name=name,
        description=desc,
        masses=masses,
        positions=pos,
        velocities=vel,
        pairs=pairs,
        schedule=phases,
        gains=gains,
        damping=damping,
        partial=partial,
        frame=frame,
        gravity=gravity,
        establish_force=force,
        establish_hover=hover,
        control=_parse_control(data.get("control")),
        waypoints=waypoints,
        sim=_parse_sim(data.get("sim")),
    )
    validate(sc)
    return sc


def validate(sc: Scenario) -> None:
    """Cross-field checks: separation at t=0 and rigidity of the graph."""
    try:
        report = rigidity_check(sc.constraint_set(), sc.particle_system())
    except VrbError as exc:
        raise ValidationError(str(exc), "agents") from None
    if not report.passes:
        raise ValidationError(f"constraint graph fails the rigidity check ({report.summary()})", "constraints.pairs")


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a YAML scenario document."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed scenario text: {exc}") from None
    return scenario_from_dict(data)


# dumping ----------------------------------------------------------------------


def _floats(a) -> list:
    return [float(x) for x in np.asarray(a).ravel()]


def scenario_to_dict(sc: Scenario) -> dict:
    """Normalized mapping with every default spelled out (1-based indices)."""
    phases = []
    for ph in sc.schedule:
        entry = {"start": ph.start} if ph.start is not None else {"at_waypoint": ph.at_waypoint}
        entry["distances"] = _floats(ph.distances)
        phases.append(entry)
    out = {
        "name": sc.name,
        "description": sc.description,
        "gravity": float(sc.gravity),
        "agents": [
            {"mass": float(m), "position": _floats(p), "velocity": _floats(v)}
            for m, p, v in zip(sc.masses, sc.positions, sc.velocities)
        ],
        "constraints": {
            "pairs": [[int(i) + 1, int(j) + 1] for i, j in sc.pairs],
            "phases": phases,
            "gains": {"alpha": sc.gains.alpha, "beta": sc.gains.beta, "gamma": sc.gains.gamma},
            "damping": float(sc.damping),
            "partial": bool(sc.partial),
        },
        "establishment_input": {"force": _floats(sc.establish_force), "hover": bool(sc.establish_hover)},
        "control": {
            "mode": sc.control.mode,
            "allocation": sc.control.allocation,
            "translation": {"Q": list(sc.control.translation_Q), "R": sc.control.translation_R},
            "attitude": {"Q": list(sc.control.attitude_Q), "R": sc.control.attitude_R},
            "reschedule_threshold": sc.control.reschedule_threshold,
            "free_axis_rtol": sc.control.axis_rtol,
        },
        "waypoints": [
            {
                "position": _floats(w.position),
                "velocity": _floats(w.velocity),
                "attitude_deg": _floats(w.attitude_deg),
                "rates_deg": _floats(w.rates_deg),
                "hold": w.hold,
            }
            for w in sc.waypoints
        ],
        "sim": {f.name: getattr(sc.sim, f.name) for f in fields(SimConfig)},
    }
    if sc.frame.x_axis_agent >= 0:
        out["frame"] = {
            "x_axis_agent": sc.frame.x_axis_agent + 1,
            "y_axis_pair": [sc.frame.y_axis_pair[0] + 1, sc.frame.y_axis_pair[1] + 1],
        }
    return out


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)


# overrides and lookup -----------------------------------------------------------


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``dotted.path=value`` to a raw scenario mapping in place.

    The value is read as YAML, so ``sim.dt=0.005`` gives a float and
    ``waypoints.0.position=[1,2,3]`` a list.  List elements are addressed by
    integer path components.
    """
    if "=" not in assignment:
        raise ValidationError("override must look like key=value", assignment)
    path, text = assignment.split("=", 1)
    keys = path.strip().split(".")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"cannot read override value {text!r}: {exc}") from None
    node: Any = data
    for depth, key in enumerate(keys):
        last = depth == len(keys) - 1
        here = ".".join(keys[: depth + 1])
        if isinstance(node, list):
            try:
                idx = int(key)
                node[idx]
            except (ValueError, IndexError):
                raise ValidationError("no such list element", here) from None
            if last:
                node[idx] = value
            else:
                node = node[idx]
        elif isinstance(node, dict):
            if last:
                node[key] = value
            else:
                node = node.setdefault(key, {})
        else:
            raise ValidationError("cannot descend into a scalar", here)


def bundled_names() -> list[str]:
    root = resources.files("vrbsim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def read_scenario_text(name_or_path: str | Path) -> str:
    """Text of a scenario file, or of a bundled scenario given by name."""
    path = Path(name_or_path)
    if path.is_file():
        return path.read_text()
    res = resources.files("vrbsim") / "scenarios" / f"{name_or_path}.yaml"
    if res.is_file():
        return res.read_text()
    raise ScenarioError(f"no scenario file or bundled scenario named {str(name_or_path)!r}")


def load_scenario(name_or_path: str | Path, overrides: list[str] | None = None) -> Scenario:
    text = read_scenario_text(name_or_path)
    if not overrides:
        return parse_scenario(text)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed scenario text: {exc}") from None
    for item in overrides:
        apply_override(data, item)
    return scenario_from_dict(data)
