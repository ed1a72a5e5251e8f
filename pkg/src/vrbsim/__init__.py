"""Virtual rigid body formation simulation.

Point-mass agents are held in a rigid formation by Baumgarte-stabilized
distance-constraint forces; the formation is then flown as one rigid body
with LQR waypoint guidance and force allocation.
"""

from .allocation import WrenchCommand, allocate, build_allocation, recombine
from .constraints import (
    BaumgarteGains,
    ConstraintSet,
    DistanceConstraint,
    ParticleSystem,
    PiecewiseConstant,
    constraint_force,
    constraint_jacobian,
    evaluate_constraints,
    jacobian_rate,
    rigidity_check,
)
from .dynamics import FrameSpec, InertiaTensor, VrbState, attach_body_frame, inertia
from .errors import *  # noqa: F401,F403
from .guidance import Waypoint, solve_care, wrench_command
from .scenario import Scenario, load_scenario, parse_scenario
from .sim import Mission, SimConfig, SimLog, momentum_energy_audit, run_mission

__version__ = "0.1.0"
