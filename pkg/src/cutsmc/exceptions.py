"""Exception hierarchy shared by every module."""


class CutSMCError(Exception):
    """Base class for all errors raised by cutsmc."""


class InvalidInputError(CutSMCError, ValueError):
    """An argument is out of range or has the wrong shape."""


class SingularInputError(InvalidInputError):
    """The input sits on a singularity of a forward map."""


class ConfigurationError(CutSMCError, ValueError):
    """A sampler or experiment configuration is inconsistent."""

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class NumericalFailure(CutSMCError):
    """Base class for failures that arise while sampling."""


class ModelEvaluationError(NumericalFailure):
    """A user supplied model returned NaN or could not be evaluated."""


class InvalidStateError(NumericalFailure):
    """A Markov chain was started at a point with zero target density."""


class DegenerateWeightsError(NumericalFailure):
    """Every importance weight is zero (support mismatch between targets)."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class KernelFailureError(NumericalFailure):
    """A mutation kernel could not complete its move."""

    def __init__(self, message, particle=None, step=None):
        where = []
        if step is not None:
            where.append(f"step {step}")
        if particle is not None:
            where.append(f"particle {particle}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.particle = particle
        self.step = step


class DegenerateChainsError(NumericalFailure):
    """Chains have zero within-chain variance."""


class Chi2OverflowWarning(RuntimeWarning):
    """A closed-form chi-squared divergence overflowed to +inf."""
