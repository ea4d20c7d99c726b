class AtvLabError(Exception):
    """Base class for every error raised by the lab."""


class DimensionError(AtvLabError, ValueError):
    pass


class ContractError(AtvLabError):
    """A documented precondition of an operation was violated."""


class CapacityError(AtvLabError):
    pass


class NonFiniteError(AtvLabError, FloatingPointError):
    pass


class DegenerateInputError(AtvLabError, ValueError):
    pass


class DataIntegrityError(AtvLabError):
    pass


class ConfigError(AtvLabError):
    """Invalid configuration. ``errors`` maps a config key to its messages."""

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = errors or {}

    def __str__(self):
        if not self.errors:
            return super().__str__()
        details = '; '.join(
            f'{key}: {" ".join(messages)}' for key, messages in sorted(self.errors.items()))
        return f'{super().__str__()} ({details})'
