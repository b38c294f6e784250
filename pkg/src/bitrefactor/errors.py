"""Exception types shared across the package."""


class RefactorError(Exception):
    """Base class for all errors raised by bitrefactor."""


class NonFiniteInput(RefactorError, ValueError):
    pass


class ShapeMismatch(RefactorError, ValueError):
    pass


class BadBitplaneCount(RefactorError, ValueError):
    pass


class ShortInput(RefactorError, ValueError):
    pass


class EmptyInput(RefactorError, ValueError):
    pass


class CorruptPayload(RefactorError, ValueError):
    pass


class UnknownMethodTag(CorruptPayload):
    pass


class StageFailure(RefactorError, RuntimeError):
    """A pipeline stage raised; carries the partial trace and the cancelled tasks."""

    def __init__(self, task, cause, trace=None, cancelled=()):
        super().__init__(f"stage {task} failed: {cause!r}")
        self.task = task
        self.cause = cause
        self.trace = trace
        self.cancelled = list(cancelled)


class UnreachableTolerance(RefactorError):
    """Full precision was retrieved and the requested tolerance is still not met."""

    def __init__(self, tau, achieved, result=None):
        super().__init__(f"tolerance {tau:g} unreachable, best achievable bound {achieved:g}")
        self.tau = tau
        self.achieved = achieved
        self.result = result
