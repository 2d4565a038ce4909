"""Exception hierarchy shared by every stage of the pipeline."""


class PriorGuideError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PriorGuideError, ValueError):
    pass


class IngestionError(PriorGuideError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ShapeError(PriorGuideError, ValueError):
    pass


class UsageError(PriorGuideError, RuntimeError):
    pass


class NumericFault(PriorGuideError, FloatingPointError):
    pass


class EstimationError(PriorGuideError, RuntimeError):
    pass


class PriorGenerationError(PriorGuideError, RuntimeError):
    pass


class DegenerateTrainingError(PriorGenerationError):
    pass


class DegenerateFitError(PriorGuideError, RuntimeError):
    """Raised when the loss vector carries no separation evidence."""


class TrainingError(PriorGuideError, RuntimeError):
    pass
