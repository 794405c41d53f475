"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates an operation's preconditions."""


class SingularLoopError(ArithmeticError):
    """``1 + G_fb`` vanishes (or nearly so) on the evaluation grid."""


class ModelEvaluationError(ArithmeticError):
    """A model spectrum evaluated to a non-finite value."""


class EmptyResultError(ValueError):
    """Every bin of a result was masked out."""


class FitError(RuntimeError):
    """A least-squares fit failed or the data cannot be fitted."""


class ModeNotFoundError(FitError):
    """No spectral peak was found near a mode's initial frequency."""

    def __init__(self, index, freq_hz, reason=""):
        self.index = index
        self.freq_hz = freq_hz
        msg = f"mode {index} not found near {freq_hz:.6g} Hz"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class DatasetFormatError(ValueError):
    """A dataset or spectrum file is corrupt or has an unknown layout."""


class ConfigError(InvalidInputError):
    """A configuration file violates the schema; ``path`` locates the field."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
