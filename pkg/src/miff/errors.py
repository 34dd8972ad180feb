"""Exception hierarchy shared by every stage of the pipeline."""


class MiffError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class InvalidArgumentError(MiffError, ValueError):
    exit_code = 2


class FormatError(MiffError, ValueError):
    """Malformed input file.

    ``line`` is the 1-based physical line; ``record`` the 1-based frame record
    (the header line is not a record).
    """

    exit_code = 2

    def __init__(self, message, line=None, record=None):
        where = []
        if record is not None:
            where.append(f"record {record}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.record = record


class ConfigError(MiffError, ValueError):
    exit_code = 2


class FeatureMissingError(MiffError):
    exit_code = 2

    def __init__(self, message, frame=None):
        super().__init__(message)
        self.frame = frame


class DegenerateProfileError(MiffError):
    """Raised when a score profile has a single value, so no threshold exists."""


class DegenerateFlowError(MiffError):
    """Flow vectors are (near) parallel; no focus of expansion can be located."""


class InfeasibleError(MiffError):
    exit_code = 3


class GeometryError(MiffError):
    """Degenerate point configuration or non-invertible transform."""


class InsufficientCorrespondencesError(GeometryError):
    pass


class NoModelError(GeometryError):
    pass


class NonPrincipalPowerError(GeometryError):
    pass


class OrientationError(GeometryError):
    pass


class UnstabilizableError(MiffError):
    exit_code = 4


class StageError(MiffError):
    """Wraps a failure inside ``run_pipeline`` with the stage that raised it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
