"""Exception types shared by the package."""


class PathcalcError(Exception):
    """Base class for all errors raised by pathcalc."""


class InvalidArgument(PathcalcError, ValueError):
    pass


class OutOfRange(PathcalcError, ValueError):
    pass


class DomainViolation(PathcalcError, ValueError):
    """A value left the declared state space (or a table's domain).

    ``where`` carries the offending point (a time or a driver value).
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class InvalidSpec(PathcalcError, ValueError):
    pass


class EvaluationFailure(PathcalcError, RuntimeError):
    """Evaluation of a functional or strategy failed at node time ``t``."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class GenerationFailure(PathcalcError, RuntimeError):
    pass


class NotReplicating(PathcalcError, RuntimeError):
    """A replication certificate failed at ``checkpoint``."""

    def __init__(self, message, checkpoint=None, error=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.error = error
