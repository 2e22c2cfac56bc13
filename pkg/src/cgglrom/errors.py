"""Exception hierarchy shared by every stage of the pipeline."""


class CgglError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(CgglError, ValueError):
    pass


class PreconditionError(CgglError):
    """Operation applied to an object in the wrong state (e.g. refining a global patch)."""


class UnsupportedConfigurationError(CgglError):
    pass


class OutOfDomainError(CgglError, ValueError):
    pass


class ConfigurationError(CgglError):
    """Missing or inconsistent run configuration, e.g. absent EQP weights."""


class SolverError(CgglError):
    """Linear or nonlinear solve failed."""


class NearDependenceError(SolverError):
    """Local finite-element space (nearly) spans one or more global modes."""

    def __init__(self, message, modes=(), condition=float("inf")):
        super().__init__(message)
        self.modes = tuple(modes)
        self.condition = condition


class RankDeficiencyError(CgglError, ValueError):
    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank


class InfeasibleError(CgglError):
    """Linear program has no feasible point."""
