"""Exception hierarchy shared by all modules.

Two families exist so the CLI can map failures onto exit codes: input and
configuration problems (exit 2) and numerical solver failures (exit 3).
"""


class DbarlabError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(DbarlabError, ValueError):
    """Invalid input, configuration or file contents."""


class SupportViolatesD(ConfigError):
    pass


class GridNotSymmetric(ConfigError):
    pass


class ZeroLambda(ConfigError):
    pass


class InsufficientSpan(ConfigError):
    pass


class DegenerateFit(ConfigError):
    pass


class SolverError(DbarlabError, RuntimeError):
    """A numerical solve failed; ``stage`` names the failing equation."""

    def __init__(self, message, stage=None, **info):
        super().__init__(message)
        self.stage = stage
        self.info = info


class NoConvergence(SolverError):
    pass


class SingularDenominator(SolverError):
    pass


class SingularSystem(SolverError):
    pass


class DirichletEigenvalueHit(SolverError):
    pass


class InconsistentPair(SolverError):
    pass


class TailTooHeavy(SolverError):
    pass
