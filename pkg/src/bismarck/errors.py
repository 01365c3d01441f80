class BismarckError(Exception):
    pass


class DimensionMismatch(BismarckError, ValueError):
    pass


class NonFiniteError(BismarckError, FloatingPointError):
    """Raised when an update produces an inf/nan model component."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite model component after step {step}")


class ParseError(BismarckError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelFileError(BismarckError, ValueError):
    pass


class ChecksumError(ModelFileError):
    pass
