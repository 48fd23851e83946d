"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class InfeasibleStateError(ValueError):
    """The initial state lies outside the feasible zone."""

    def __init__(self, message="infeasible initial state"):
        super().__init__(message)


class HorizonError(ValueError):
    """The time horizon is too short for the requested synthesis."""


class StandingAssumptionError(ValueError):
    """Parameters violate the standing assumption s_M* <= 1."""


class IntegrationError(RuntimeError):
    """The ODE solver failed; ``last_time`` is the last time reached."""

    def __init__(self, message, last_time):
        super().__init__(f"{message} (last valid time {last_time!r})")
        self.last_time = last_time


class OracleError(RuntimeError):
    """A brute-force oracle did not converge."""
