class TempsegError(Exception):
    """Base class of all exceptions raised by :mod:`tempseg`"""


class DimensionError(TempsegError):
    """Raised when tensor shapes or channel counts don't fit together"""


class DomainError(TempsegError):
    """Raised when an argument is outside of its domain"""


class DivergenceError(TempsegError):
    """Raised by :func:`~.fit` when the loss becomes non-finite"""


class GradientCheckError(TempsegError):
    """Raised when analytic gradients disagree with finite differences"""


class ConfigError(TempsegError):
    """Raised by configuration validation and configuration file readers"""

    def __init__(self, msg, filepath=None, line_number=None):
        if filepath and line_number:
            super().__init__(f'{filepath}@{line_number}: {msg}')
        elif filepath:
            super().__init__(f'{filepath}: {msg}')
        else:
            super().__init__(msg)


class DataError(TempsegError):
    """Raised when a dataset, feature file or checkpoint can't be used"""

    def __init__(self, msg, filepath=None):
        self.filepath = str(filepath) if filepath else None
        if filepath:
            super().__init__(f'{filepath}: {msg}')
        else:
            super().__init__(msg)


class FormatError(DataError):
    """Raised when a binary file is malformed"""


class BadMagicError(FormatError):
    """Raised when a binary file doesn't start with the expected magic bytes"""


class VersionError(FormatError):
    """Raised when a binary file has an unsupported format version"""


class TruncatedError(FormatError):
    """Raised when a binary file ends prematurely"""


class CheckpointError(DataError):
    """Raised when a checkpoint doesn't match its configuration or a dataset"""
