"""Exception hierarchy shared across the engine."""


class FreqTrainError(Exception):
    """Base class for all engine errors."""


class SizeError(FreqTrainError):
    """Tensor or spectrum dimensions violate an invariant (e.g. odd side)."""


class ParameterError(FreqTrainError):
    """An operation parameter is out of its documented range."""


class FormatError(FreqTrainError):
    """A data file is malformed.  Carries the byte offset of the defect."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = ""
        if path is not None:
            where += f" in {path}"
        if offset is not None:
            where += f" at byte offset {offset}"
        super().__init__(message + where)


class CostModelError(FreqTrainError):
    """The FLOPs cost model returned an unusable value."""


class SpecError(FreqTrainError):
    """A network/config spec is internally inconsistent or mismatched."""


class CheckpointError(FreqTrainError):
    """A checkpoint file is unreadable, truncated or corrupt."""


class DivergedError(FreqTrainError):
    """Training produced a non-finite loss.  Carries the iteration index."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class LinearityError(FreqTrainError):
    """An operator handed to the linearization oracle failed its additivity spot-check."""


class ConfigError(FreqTrainError):
    """A run configuration failed schema validation."""
