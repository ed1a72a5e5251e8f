"""Exception hierarchy shared by all vrbsim modules."""


class VrbError(Exception):
    """Base class for every error raised by vrbsim."""


class DegenerateGeometry(VrbError):
    """A constrained agent pair is (numerically) coincident."""


class RankDeficient(VrbError):
    """A constraint Jacobian or allocation matrix lost row rank."""


class IllConditionedFrame(VrbError):
    """Body-frame seed vectors are near-zero or near-parallel."""


class SingularInertia(VrbError):
    """Inertia tensor is singular and a full inverse was requested."""


class NotStabilizable(VrbError):
    """The Riccati equation has no stabilizing solution."""


class IllConditioned(VrbError):
    """A numerical subproblem is too ill-conditioned to trust."""


class StaleGains(VrbError):
    """Controller gains were designed for a different inertia."""


class NumericalDivergence(VrbError):
    """Simulation state left the admissible numeric range."""


class MissionTimeout(VrbError):
    """The mission did not finish before the configured end time."""


class ScenarioError(VrbError):
    """Base class for scenario file problems."""


class ParseError(ScenarioError):
    """Scenario text is not well-formed."""


class ValidationError(ScenarioError):
    """Scenario is well-formed but violates an invariant.

    Attributes:
        path: dotted field path of the offending entry (may be empty).
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
