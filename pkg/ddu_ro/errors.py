class DduError(Exception):
    """Base class for every error raised by the solver package."""


class InstanceError(DduError):
    """Instance data is malformed or dimensionally inconsistent."""


class BackendError(DduError):
    """The MILP/LP backend failed; never a statement about feasibility."""


class RayError(DduError):
    """A normalized ray was requested but the recourse system is feasible."""


class BudgetExceeded(DduError):
    pass


class ConfigError(DduError):
    pass
