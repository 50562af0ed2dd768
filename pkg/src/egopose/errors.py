"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class EgoPoseError(Exception):
    exit_code = 2


class ConfigError(EgoPoseError):
    exit_code = 1


class UsageError(ConfigError):
    pass


class FormatError(EgoPoseError):
    """Malformed file content; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptySequenceError(FormatError):
    pass


class LoadError(EgoPoseError):
    pass


class NonProjectablePointError(EgoPoseError):
    pass


class InvalidGeometryError(EgoPoseError):
    pass


class LabelRangeError(EgoPoseError):
    pass


class CheckpointFormatError(EgoPoseError):
    pass


class EvalError(EgoPoseError):
    pass


class UndefinedMetricError(EgoPoseError):
    pass


class NumericError(EgoPoseError):
    exit_code = 3


class ShapeError(NumericError):
    pass
