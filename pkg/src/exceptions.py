class HedgeLabError(Exception):
    pass


class InvalidInputError(HedgeLabError, ValueError):
    pass


class ConfigurationError(HedgeLabError):
    pass


class UsageError(HedgeLabError):
    pass


class CheckpointError(HedgeLabError):
    pass


class TrainingDivergedError(HedgeLabError):
    """Raised when a training loss turns non-finite or explodes; carries what is needed to dump a diagnosis."""

    def __init__(self, message: str, diagnostics: dict | None = None, last_good=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.last_good = last_good
