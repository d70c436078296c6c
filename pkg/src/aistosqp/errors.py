"""Exception hierarchy shared by all modules."""


class StoSQPError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(StoSQPError, ValueError):
    """Inputs have inconsistent dimensions or invalid parameter values."""


class UnknownProblemError(ConfigurationError, KeyError):
    def __init__(self, name, available):
        self.name = name
        self.available = tuple(available)
        super().__init__(
            f"unknown problem {name!r}; available: {', '.join(self.available)}"
        )

    def __str__(self):
        return self.args[0]


class ConstraintQualificationError(StoSQPError):
    """Constraint Jacobian is (numerically) rank deficient."""


class SingularKKTError(StoSQPError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class DivergenceError(StoSQPError):
    """Iterate left the bounded region or became non-finite.

    ``trace`` holds the rows recorded before the failure.
    """

    def __init__(self, message, iteration=None, trace=None):
        self.iteration = iteration
        self.trace = trace if trace is not None else []
        super().__init__(message)


class OracleFailure(StoSQPError):
    """The deterministic SQP oracle did not reach its tolerance."""


class OracleUnavailableError(StoSQPError):
    """A reference quantity needs a known solution that the problem lacks."""


class InvalidScheduleError(StoSQPError, ValueError):
    pass


class DegenerateDirectionError(StoSQPError, ValueError):
    """``w^T Xi w`` is not positive, so no interval can be formed."""
