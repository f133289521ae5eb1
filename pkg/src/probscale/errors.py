"""Exception hierarchy shared by all modules."""


class ProbScaleError(Exception):
    """Base class for every error raised by this package."""


class EmptySetError(ProbScaleError):
    """A polytope or scenario intersection has no (interior) point."""


class UnboundedError(ProbScaleError):
    """A quantity that must be finite (support, radius, extent) is unbounded."""


class SingularShapeError(ProbScaleError):
    """A shape matrix is too ill-conditioned to invert."""


class SolverError(ProbScaleError):
    """A backend solve ended with a status the caller cannot handle."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class ScalingError(ProbScaleError):
    """Probabilistic scaling returned a nonpositive factor."""


class StageError(ProbScaleError):
    """Wraps a failure raised inside one stage of a multi-stage pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
