"""Exception hierarchy shared by every service."""


class T2SError(Exception):
    """Base class for all domain failures."""


class ArgumentError(T2SError, ValueError):
    """Raised when an operation receives arguments outside its contract."""


class ConfigError(T2SError):
    """Raised when configuration values are inconsistent with each other or with a model."""


class CheckpointError(ConfigError):
    """Raised when a checkpoint is missing, malformed, or does not match its manifest."""


class DatasetParseError(T2SError):
    """Raised when a dataset record cannot be parsed or validated."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyDatasetError(T2SError):
    """Raised when a dataset source contains no records."""


class TransportError(T2SError):
    """Raised when a remote call still fails after all retries."""

    def __init__(self, message: str, candidate_index: int | None = None):
        self.candidate_index = candidate_index
        super().__init__(message)


class NumericalDivergenceError(T2SError):
    """Raised when an integration step or network output becomes non-finite."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message)


class NonFiniteLossError(T2SError):
    """Raised when a training loss becomes non-finite; carries the diagnostic record."""

    def __init__(self, iteration: int, record: dict):
        self.iteration = iteration
        self.record = record
        super().__init__(f"Non-finite loss at iteration {iteration}: {record}")


class UndefinedMetricError(T2SError):
    """Raised when a metric is mathematically undefined for its inputs."""
