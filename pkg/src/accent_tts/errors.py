"""Exception hierarchy shared by every stage of the pipeline."""


class AccentTTSError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class InputTooShort(AccentTTSError):
    pass


class AlignmentMismatch(AccentTTSError):
    pass


class EmptyTrack(AccentTTSError):
    pass


class EmptyInput(AccentTTSError):
    pass


class InsufficientData(AccentTTSError):
    pass


class UnpairedUtterance(AccentTTSError):
    pass


class SolverDiverged(AccentTTSError):
    """Newton solver hit its iteration cap without meeting the gradient tolerance."""

    def __init__(self, message, objective=None, grad_norm=None):
        super().__init__(message)
        self.objective = objective
        self.grad_norm = grad_norm


class OracleTooLarge(AccentTTSError):
    pass


class DimMismatch(AccentTTSError):
    pass


class ShapeError(AccentTTSError, ValueError):
    pass


class ConfigError(AccentTTSError, ValueError):
    pass


class IntensityRange(AccentTTSError, ValueError):
    pass


class ParseError(AccentTTSError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingAsset(AccentTTSError):
    pass


class CorpusTooSmall(AccentTTSError):
    pass


class TrainingDiverged(AccentTTSError):
    """A training loss became NaN or infinite."""
