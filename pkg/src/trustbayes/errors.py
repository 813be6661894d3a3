"""Exception types shared across the package."""


class TrustBayesError(Exception):
    """Base class for package-specific failures."""


class InputError(TrustBayesError, ValueError):
    """Invalid argument, configuration, or file content."""


class NumericalError(TrustBayesError, RuntimeError):
    """Linear-algebra failure that survived every jitter escalation level."""

    def __init__(self, message, jitter_levels=(), task_id=None):
        super().__init__(message)
        self.jitter_levels = tuple(jitter_levels)
        self.task_id = task_id


class FeasibilityError(TrustBayesError, RuntimeError):
    """The certification target is provably unreachable at the given sample sizes."""

    def __init__(self, message, margin=None):
        super().__init__(message)
        self.margin = margin
